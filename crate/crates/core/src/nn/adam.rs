use super::ParamVector;
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Norm of the gradient before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Rescale `grads` in place so their L2 norm is at most `max_norm`. Returns
/// the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One Adam step with global-norm gradient clipping and a learning-rate
/// multiplier from the schedule.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamVector,
    grads: &ParamVector,
    max_norm: f64,
    lr_multiplier: f64,
) -> Result<StepStats> {
    check_len("adam params", state.m.len(), params.len())?;
    check_len("adam grads", params.len(), grads.len())?;
    if !(max_norm > 0.0) {
        return Err(Error::Invalid(format!("max_norm must be > 0, got {max_norm}")));
    }
    if let Some(index) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            context: "gradient".into(),
            index,
        });
    }
    let mut g = grads.as_slice().to_vec();
    let grad_norm = clip_grad_norm(&mut g, max_norm);

    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let lr = state.lr * lr_multiplier;
    let p = params.as_mut_slice();
    for i in 0..p.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    params.ensure_finite("parameters after Adam step")?;
    Ok(StepStats {
        grad_norm,
        clipped: grad_norm > max_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut st = AdamState::new(3, 0.1);
        let mut p = ParamVector::from_vec(vec![1.0, -2.0, 3.0]);
        adam_step(&mut st, &mut p, &ParamVector::zeros(3), 1.0, 1.0).unwrap();
        assert_eq!(p.as_slice(), &[1.0, -2.0, 3.0]);
        assert_eq!(st.m, vec![0.0; 3]);
        assert_eq!(st.v, vec![0.0; 3]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn clipping_bounds_effective_norm() {
        let mut g = vec![6.0, 8.0];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 10.0);
        let after = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((after - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn single_step_matches_hand_formula() {
        let lr = 0.01;
        let g = [0.3, -0.02, 0.0];
        let mut st = AdamState::new(3, lr);
        let mut p = ParamVector::from_vec(vec![0.5, 0.5, 0.5]);
        adam_step(&mut st, &mut p, &ParamVector::from_vec(g.to_vec()), 10.0, 1.0).unwrap();
        for i in 0..3 {
            let m = (1.0 - 0.9) * g[i];
            let v = (1.0 - 0.999) * g[i] * g[i];
            let m_hat = m / (1.0 - 0.9);
            let v_hat = v / (1.0 - 0.999);
            let expect = 0.5 - lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p.as_slice()[i] - expect).abs() < 1e-15, "{i}");
        }
        // sign-like first step
        assert!((p.as_slice()[0] - (0.5 - lr)).abs() < 1e-9);
        assert!((p.as_slice()[1] - (0.5 + lr)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_rejected_with_index() {
        let mut st = AdamState::new(3, 0.1);
        let mut p = ParamVector::zeros(3);
        let err = adam_step(&mut st, &mut p, &ParamVector::from_vec(vec![0.0, f64::NAN, 1.0]), 1.0, 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
        assert_eq!(st.t, 0);
        assert_eq!(p.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn lr_multiplier_scales_step() {
        let mut a = AdamState::new(1, 0.1);
        let mut b = AdamState::new(1, 0.1);
        let mut pa = ParamVector::zeros(1);
        let mut pb = ParamVector::zeros(1);
        let g = ParamVector::from_vec(vec![1.0]);
        adam_step(&mut a, &mut pa, &g, 10.0, 1.0).unwrap();
        adam_step(&mut b, &mut pb, &g, 10.0, 0.5).unwrap();
        assert!((pa.as_slice()[0] - 2.0 * pb.as_slice()[0]).abs() < 1e-15);
    }
}
