//! Analytic toy tasks. All integrate with semi-implicit Euler at `DT`.

use std::f64::consts::PI;

use super::EnvId;

pub const DT: f64 = 0.05;
pub const MAX_EPISODE_LEN: u32 = 200;
pub const RESET_NOISE: f64 = 0.1;

pub const POINT_MASS_ACCEL: f64 = 1.0;
pub const POINT_MASS_START: [f64; 4] = [1.0, 1.0, 0.0, 0.0];
pub const POINT_MASS_BOUND: f64 = 3.0;
/// Distance term saturates here so |r| stays within 2.
pub const POINT_MASS_DIST_CAP: f64 = 2.8;

pub const PENDULUM_GRAVITY: f64 = 10.0;
pub const PENDULUM_MAX_TORQUE: f64 = 5.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;

pub const CART_GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const POLE_HALF_LEN: f64 = 0.5;
pub const CART_FORCE: f64 = 10.0;
pub const CART_X_LIMIT: f64 = 2.4;
pub const POLE_ANGLE_LIMIT: f64 = 0.21;

pub fn state_dim(id: EnvId) -> usize {
    match id {
        EnvId::PointMass2D => 4,
        EnvId::PendulumSwingUp => 2,
        EnvId::CartPole => 4,
    }
}

pub fn action_dim(id: EnvId) -> usize {
    match id {
        EnvId::PointMass2D => 2,
        EnvId::PendulumSwingUp | EnvId::CartPole => 1,
    }
}

pub fn nominal_start(id: EnvId) -> Vec<f64> {
    match id {
        EnvId::PointMass2D => POINT_MASS_START.to_vec(),
        EnvId::PendulumSwingUp => vec![PI, 0.0],
        EnvId::CartPole => vec![0.0; 4],
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Advance `s` in place under `action` (already in [-1, 1]); returns the reward.
pub fn advance(id: EnvId, s: &mut [f64], action: &[f64]) -> f64 {
    let a2: f64 = action.iter().map(|a| a * a).sum();
    match id {
        EnvId::PointMass2D => {
            for k in 0..2 {
                s[2 + k] += action[k] * DT * POINT_MASS_ACCEL;
                s[k] += s[2 + k] * DT;
            }
            let dist = s[0].hypot(s[1]);
            1.0 - dist.min(POINT_MASS_DIST_CAP) - 0.1 * a2
        }
        EnvId::PendulumSwingUp => {
            let (theta, omega) = (s[0], s[1]);
            // theta = 0 is upright
            let acc = PENDULUM_GRAVITY * theta.sin() + PENDULUM_MAX_TORQUE * action[0];
            let w = (omega + acc * DT).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
            s[1] = w;
            s[0] = wrap_angle(theta + w * DT);
            s[0].cos() - 0.01 * w * w - 0.01 * a2
        }
        EnvId::CartPole => {
            let (x, xd, th, thd) = (s[0], s[1], s[2], s[3]);
            let force = CART_FORCE * action[0];
            let total = CART_MASS + POLE_MASS;
            let pml = POLE_MASS * POLE_HALF_LEN;
            let (sin, cos) = th.sin_cos();
            let temp = (force + pml * thd * thd * sin) / total;
            let th_acc = (CART_GRAVITY * sin - cos * temp)
                / (POLE_HALF_LEN * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
            let x_acc = temp - pml * th_acc * cos / total;
            s[1] = xd + DT * x_acc;
            s[0] = x + DT * s[1];
            s[3] = thd + DT * th_acc;
            s[2] = th + DT * s[3];
            1.0
        }
    }
}

/// Failure termination; a pure function of the physical state.
pub fn terminated(id: EnvId, s: &[f64]) -> bool {
    match id {
        EnvId::PointMass2D => s[0].hypot(s[1]) > POINT_MASS_BOUND,
        EnvId::PendulumSwingUp => false,
        EnvId::CartPole => s[0].abs() > CART_X_LIMIT || s[2].abs() > POLE_ANGLE_LIMIT,
    }
}

/// Low-dimensional critic input.
pub fn privileged(id: EnvId, s: &[f64]) -> Vec<f64> {
    match id {
        EnvId::PointMass2D | EnvId::CartPole => s.to_vec(),
        EnvId::PendulumSwingUp => vec![s[0].cos(), s[0].sin(), s[1]],
    }
}

pub fn privileged_dim(id: EnvId) -> usize {
    match id {
        EnvId::PointMass2D | EnvId::CartPole => 4,
        EnvId::PendulumSwingUp => 3,
    }
}

/// Velocity sub-vector exposed alongside pixels.
pub fn proprio(id: EnvId, s: &[f64]) -> Vec<f64> {
    match id {
        EnvId::PointMass2D => vec![s[2], s[3]],
        EnvId::PendulumSwingUp => vec![s[1]],
        EnvId::CartPole => vec![s[1], s[3]],
    }
}

pub fn proprio_dim(id: EnvId) -> usize {
    match id {
        EnvId::PointMass2D | EnvId::CartPole => 2,
        EnvId::PendulumSwingUp => 1,
    }
}

/// Largest |reward| the task can emit.
pub fn reward_bound(id: EnvId) -> f64 {
    match id {
        EnvId::PointMass2D => 2.0,
        EnvId::PendulumSwingUp => 1.0 + 0.01 * PENDULUM_MAX_SPEED * PENDULUM_MAX_SPEED + 0.01,
        EnvId::CartPole => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_hand_step() {
        let mut s = vec![0.5, -0.2, 0.1, 0.3];
        let r = advance(EnvId::PointMass2D, &mut s, &[0.4, -1.0]);
        let v = [0.1 + 0.4 * 0.05, 0.3 - 1.0 * 0.05];
        let p = [0.5 + v[0] * 0.05, -0.2 + v[1] * 0.05];
        assert_eq!(s, vec![p[0], p[1], v[0], v[1]]);
        let expect = 1.0 - p[0].hypot(p[1]) - 0.1 * (0.16 + 1.0);
        assert!((r - expect).abs() < 1e-15);
    }

    #[test]
    fn point_mass_at_rest_stays() {
        let mut s = vec![0.7, -1.1, 0.0, 0.0];
        advance(EnvId::PointMass2D, &mut s, &[0.0, 0.0]);
        assert_eq!(&s[..2], &[0.7, -1.1]);
    }

    #[test]
    fn pendulum_upright_is_fixed_point() {
        let mut s = vec![0.0, 0.0];
        let r = advance(EnvId::PendulumSwingUp, &mut s, &[0.0]);
        assert_eq!(s, vec![0.0, 0.0]);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, -3.0, 0.0, 3.0, PI, 7.0, 100.0] {
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI, "{a} -> {w}");
            assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn cartpole_terminates_on_angle_and_position() {
        assert!(!terminated(EnvId::CartPole, &[0.0, 0.0, 0.2, 0.0]));
        assert!(terminated(EnvId::CartPole, &[0.0, 0.0, 0.22, 0.0]));
        assert!(terminated(EnvId::CartPole, &[-2.5, 0.0, 0.0, 0.0]));
    }
}
