//! Discrete-time LQR baseline for the point mass.
//!
//! Each axis is a double integrator x = (p, v) with
//! x' = [[1, dt], [0, 1]] x + [dt^2, dt] u. The controller minimizes
//! sum gamma^t (p^2 + 0.1 u^2), the quadratic counterpart of the reward.

use super::{dynamics, EnvId, EnvState};
use crate::error::{Error, Result};

const Q_POS: f64 = 1.0;
const R_ACT: f64 = 0.1;
const ACTION_LIMIT_PRE: f64 = 2.0;

/// Per-axis state feedback u = -(k_p p + k_v v).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LqrGain {
    pub k_p: f64,
    pub k_v: f64,
}

impl LqrGain {
    pub fn action(&self, p: f64, v: f64) -> f64 {
        let lim = ACTION_LIMIT_PRE.tanh();
        (-(self.k_p * p + self.k_v * v)).clamp(-lim, lim)
    }
}

/// Solve the discounted Riccati equation by fixed-point iteration.
pub fn lqr_gain(gamma: f64) -> LqrGain {
    let dt = dynamics::DT * dynamics::POINT_MASS_ACCEL;
    let a = [[1.0, dynamics::DT], [0.0, 1.0]];
    let b = [dynamics::DT * dt, dt];
    let mut p = [[Q_POS, 0.0], [0.0, 0.0]];
    let mut k = [0.0; 2];
    for _ in 0..100_000 {
        // pb = P b, pa = P a
        let pb = [p[0][0] * b[0] + p[0][1] * b[1], p[1][0] * b[0] + p[1][1] * b[1]];
        let btpb = b[0] * pb[0] + b[1] * pb[1];
        let mut btpa = [0.0; 2];
        for c in 0..2 {
            btpa[c] = pb[0] * a[0][c] + pb[1] * a[1][c];
        }
        let denom = R_ACT + gamma * btpb;
        let new_k = [gamma * btpa[0] / denom, gamma * btpa[1] / denom];
        let mut next = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                let mut atpa = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        atpa += a[i][r] * p[i][j] * a[j][c];
                    }
                }
                let q = if r == 0 && c == 0 { Q_POS } else { 0.0 };
                next[r][c] = q + gamma * atpa - gamma * btpa[r] * new_k[c];
            }
        }
        let delta = (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| (next[r][c] - p[r][c]).abs())
            .fold(0.0, f64::max);
        p = next;
        k = new_k;
        if delta < 1e-13 {
            break;
        }
    }
    LqrGain { k_p: k[0], k_v: k[1] }
}

fn discounted_rollout(
    id: EnvId,
    initial: &EnvState,
    horizon: usize,
    gamma: f64,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
) -> f64 {
    let mut s = initial.values.clone();
    let mut ret = 0.0;
    let mut disc = 1.0;
    let first = initial.step as usize;
    for step in first..first + horizon {
        if dynamics::terminated(id, &s) || step >= dynamics::MAX_EPISODE_LEN as usize {
            break;
        }
        let a = policy(&s);
        ret += disc * dynamics::advance(id, &mut s, &a);
        disc *= gamma;
    }
    ret
}

/// Discounted return of the LQR controller run in the real point-mass
/// environment, with actions saturated exactly as the squashed policy would be.
pub fn lqr_oracle_return(id: EnvId, initial: &EnvState, horizon: usize, gamma: f64) -> Result<f64> {
    if id != EnvId::PointMass2D {
        return Err(Error::Unsupported(format!("no LQR oracle for {id}")));
    }
    if initial.values.len() != dynamics::state_dim(id) {
        return Err(Error::Shape {
            context: "lqr initial state",
            expected: dynamics::state_dim(id),
            actual: initial.values.len(),
        });
    }
    let gain = lqr_gain(gamma);
    Ok(discounted_rollout(id, initial, horizon, gamma, |s| {
        vec![gain.action(s[0], s[2]), gain.action(s[1], s[3])]
    }))
}

/// Discounted return with all-zero actions; any task.
pub fn zero_controller_return(id: EnvId, initial: &EnvState, horizon: usize, gamma: f64) -> f64 {
    let dim = dynamics::action_dim(id);
    discounted_rollout(id, initial, horizon, gamma, |_| vec![0.0; dim])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(values: Vec<f64>) -> EnvState {
        EnvState { values, step: 0 }
    }

    #[test]
    fn gain_is_stabilizing() {
        let g = lqr_gain(0.99);
        assert!(g.k_p > 0.0 && g.k_v > 0.0);
        // closed-loop spectral radius below one
        let dt = dynamics::DT;
        let m = [[1.0 - dt * dt * g.k_p, dt - dt * dt * g.k_v], [-dt * g.k_p, 1.0 - dt * g.k_v]];
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = tr * tr - 4.0 * det;
        let rho = if disc >= 0.0 {
            ((tr.abs() + disc.sqrt()) / 2.0).abs()
        } else {
            det.sqrt()
        };
        assert!(rho < 1.0, "rho = {rho}");
    }

    #[test]
    fn at_goal_collects_survival_bonus() {
        let gamma: f64 = 0.99;
        let r = lqr_oracle_return(EnvId::PointMass2D, &state(vec![0.0; 4]), 200, gamma).unwrap();
        let expected: f64 = (0..200).map(|t| gamma.powi(t)).sum();
        assert!((r - expected).abs() < 1e-12);
    }

    #[test]
    fn mirror_symmetric() {
        let a = lqr_oracle_return(EnvId::PointMass2D, &state(vec![0.7, 0.2, 0.1, 0.0]), 200, 0.99).unwrap();
        let b = lqr_oracle_return(EnvId::PointMass2D, &state(vec![-0.7, 0.2, -0.1, 0.0]), 200, 0.99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beats_zero_controller() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, crate::rng::Domain::Oracle, &[0]);
        for _ in 0..50 {
            let s = state(vec![
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ]);
            let lqr = lqr_oracle_return(EnvId::PointMass2D, &s, 200, 0.99).unwrap();
            let zero = zero_controller_return(EnvId::PointMass2D, &s, 200, 0.99);
            assert!(lqr >= zero, "{lqr} < {zero}");
        }
    }

    #[test]
    fn other_envs_unsupported() {
        let s = state(vec![0.0, 0.0]);
        assert!(matches!(
            lqr_oracle_return(EnvId::PendulumSwingUp, &s, 10, 0.99),
            Err(Error::Unsupported(_))
        ));
    }
}
