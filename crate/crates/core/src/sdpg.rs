//! Smoothed-gradient targets, the supervised actor/exploration loss,
//! temperature tuning and critic updates.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::{adam_step, mlp_backward, mlp_forward, AdamState, Batch, MlpSpec, ParamVector, PolicyInput, PolicyNet};
use crate::rollout::{ReturnTable, SegmentBuffer};

pub const SIGMA_FLOOR: f64 = 1e-6;

/// tanh(clamp(pre, lo, hi)) componentwise.
pub fn squash_action(pre: &[f64], clip: (f64, f64)) -> Vec<f64> {
    pre.iter().map(|x| x.clamp(clip.0, clip.1).tanh()).collect()
}

/// Normalized return differences against the nominal row.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaJ {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    /// (n, j, t), zero for j = 0.
    pub values: Vec<f64>,
    /// Per (n, t) std across j = 0..=M before flooring.
    pub sigma: Vec<f64>,
}

impl DeltaJ {
    pub fn get(&self, n: usize, j: usize, t: usize) -> f64 {
        self.values[(n * (self.m + 1) + j) * self.h + t]
    }

    pub fn mean_sigma(&self) -> f64 {
        self.sigma.iter().sum::<f64>() / self.sigma.len().max(1) as f64
    }
}

/// ΔJ = J(n,j,t) - J(n,0,t), divided by its population std across j (floored).
pub fn normalize_delta_j(returns: &ReturnTable) -> DeltaJ {
    let (n_, m, h) = (returns.n, returns.m, returns.h);
    let mut values = vec![0.0; returns.values.len()];
    let mut sigma = vec![0.0; n_ * h];
    let mut diffs = vec![0.0; m + 1];
    for n in 0..n_ {
        for t in 0..h {
            let base = returns.get(n, 0, t);
            for (j, d) in diffs.iter_mut().enumerate() {
                *d = returns.get(n, j, t) - base;
            }
            let mean = diffs.iter().sum::<f64>() / (m + 1) as f64;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m + 1) as f64;
            let std = var.sqrt();
            sigma[n * h + t] = std;
            let denom = std.max(SIGMA_FLOOR);
            for (j, d) in diffs.iter().enumerate() {
                values[(n * (m + 1) + j) * h + t] = d / denom;
            }
        }
    }
    DeltaJ { n: n_, m, h, values, sigma }
}

/// Per (n, t): (1/(M+1)) sum_j ΔJ ε.
pub fn mean_ascent(buffer: &SegmentBuffer, dj: &DeltaJ) -> Batch {
    let (nn, m, h) = (buffer.config.n, buffer.config.m, buffer.config.h);
    let d = buffer.action_dim;
    let mut out = Batch::zeros(nn * h, d);
    for n in 0..nn {
        for t in 0..h {
            let row = out.row_mut(n * h + t);
            for j in 0..=m {
                let w = dj.get(n, j, t);
                for (o, e) in row.iter_mut().zip(buffer.eps_at(n, j, t)) {
                    *o += w * e;
                }
            }
            row.iter_mut().for_each(|o| *o /= (m + 1) as f64);
        }
    }
    out
}

/// a + mean ascent, clipped into the pre-activation range.
pub fn actor_target(buffer: &SegmentBuffer, dj: &DeltaJ, clip: (f64, f64)) -> Batch {
    let mut g = mean_ascent(buffer, dj);
    for i in 0..g.rows() {
        let a = buffer.actions.row(i);
        for (x, ai) in g.row_mut(i).iter_mut().zip(a) {
            *x = (ai + *x).clamp(clip.0, clip.1);
        }
    }
    g
}

/// Mean over (n, t) of (1/(M+1)) sum_j ΔJ (ε² - 1) ⊙ δ.
pub fn exploration_ascent(buffer: &SegmentBuffer, dj: &DeltaJ) -> Vec<f64> {
    let (nn, m, h) = (buffer.config.n, buffer.config.m, buffer.config.h);
    let d = buffer.action_dim;
    let mut g = vec![0.0; d];
    for n in 0..nn {
        for t in 0..h {
            for j in 0..=m {
                let w = dj.get(n, j, t);
                for (k, e) in buffer.eps_at(n, j, t).iter().enumerate() {
                    g[k] += w * (e * e - 1.0) * buffer.delta[k];
                }
            }
        }
    }
    let scale = 1.0 / ((m + 1) * nn * h) as f64;
    g.iter_mut().for_each(|x| *x *= scale);
    g
}

pub fn exploration_target(buffer: &SegmentBuffer, dj: &DeltaJ, log_delta: &[f64]) -> Vec<f64> {
    exploration_ascent(buffer, dj)
        .iter()
        .zip(log_delta)
        .map(|(g, l)| l + g)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SdpgLosses {
    pub actor_bc_loss: f64,
    pub exploration_loss: f64,
    /// α · mean(δ̃); enters the objective with a minus sign.
    pub entropy_term: f64,
    pub temperature_loss: f64,
    pub critic_loss: f64,
}

#[derive(Clone, Debug)]
pub struct ActorLoss {
    pub bc: f64,
    pub exploration: f64,
    pub entropy: f64,
    pub grad_theta: ParamVector,
    pub grad_log_delta: Vec<f64>,
}

impl ActorLoss {
    pub fn total(&self) -> f64 {
        self.bc + self.exploration - self.entropy
    }
}

/// mean_rows ‖μ(o) - a_target‖² + ‖δ̃ - δ̃_target‖² - α mean(δ̃), with gradients
/// for θ and δ̃.
pub fn actor_exploration_loss(
    policy: &PolicyNet,
    theta: &ParamVector,
    log_delta: &[f64],
    input: &PolicyInput,
    a_target: &Batch,
    log_delta_target: &[f64],
    alpha: f64,
) -> Result<ActorLoss> {
    let d = policy.output_dim();
    check_len("actor target width", d, a_target.cols())?;
    check_len("actor target rows", input.rows(), a_target.rows())?;
    check_len("log_delta", d, log_delta.len())?;
    check_len("log_delta target", d, log_delta_target.len())?;
    let mu = policy.forward(theta, input)?;
    let rows = mu.rows().max(1) as f64;
    let mut upstream = Batch::zeros(mu.rows(), d);
    let mut bc = 0.0;
    for i in 0..mu.rows() {
        for k in 0..d {
            let diff = mu.row(i)[k] - a_target.row(i)[k];
            bc += diff * diff;
            upstream.row_mut(i)[k] = 2.0 * diff / rows;
        }
    }
    bc /= rows;
    let grad_theta = policy.backward(theta, input, &upstream)?;
    let mut exploration = 0.0;
    let mut grad_log_delta = vec![0.0; d];
    for k in 0..d {
        let diff = log_delta[k] - log_delta_target[k];
        exploration += diff * diff;
        grad_log_delta[k] = 2.0 * diff - alpha / d as f64;
    }
    let entropy = alpha * log_delta.iter().sum::<f64>() / d as f64;
    let loss = ActorLoss {
        bc,
        exploration,
        entropy,
        grad_theta,
        grad_log_delta,
    };
    if !loss.total().is_finite() {
        return Err(Error::NonFinite {
            context: "actor loss".into(),
            index: 0,
        });
    }
    Ok(loss)
}

/// L(α̃) = exp(α̃) · mean(exp(δ̃) - δ_target); the gradient equals L.
pub fn temperature_loss(log_alpha: f64, log_delta: &[f64], delta_target: f64) -> f64 {
    let gap = log_delta.iter().map(|l| l.exp() - delta_target).sum::<f64>() / log_delta.len() as f64;
    log_alpha.exp() * gap
}

/// One Adam descent step on the temperature loss; returns (new α̃, loss).
pub fn temperature_update(
    log_alpha: f64,
    log_delta: &[f64],
    delta_target: f64,
    opt: &mut AdamState,
    lr_multiplier: f64,
) -> Result<(f64, f64)> {
    let loss = temperature_loss(log_alpha, log_delta, delta_target);
    let mut p = ParamVector::from_vec(vec![log_alpha]);
    adam_step(opt, &mut p, &ParamVector::from_vec(vec![loss]), f64::INFINITY, lr_multiplier)?;
    Ok((p.as_slice()[0], loss))
}

/// r + (α/d) Σ (δ̃ᵢ - δ̃_target).
pub fn soft_critic_reward(r: f64, log_delta: &[f64], log_delta_target: f64, alpha: f64) -> f64 {
    let d = log_delta.len() as f64;
    r + alpha / d * log_delta.iter().map(|l| l - log_delta_target).sum::<f64>()
}

/// Learnable exploration scale and temperature with their optimizers.
#[derive(Clone, Debug)]
pub struct ExplorationState {
    pub log_delta: Vec<f64>,
    pub log_delta_clip: (f64, f64),
    pub log_alpha: f64,
    pub delta_target: f64,
    pub delta_opt: AdamState,
    pub alpha_opt: AdamState,
}

impl ExplorationState {
    pub fn new(
        dim: usize,
        init_log_delta: f64,
        log_delta_clip: (f64, f64),
        init_alpha: f64,
        delta_target: f64,
        lr_delta: f64,
        lr_alpha: f64,
    ) -> Result<Self> {
        if log_delta_clip.0 >= log_delta_clip.1 {
            return Err(Error::Invalid("log-std clip must satisfy lo < hi".into()));
        }
        if init_alpha <= 0.0 || delta_target <= 0.0 {
            return Err(Error::Invalid("temperature and target std must be positive".into()));
        }
        Ok(ExplorationState {
            log_delta: vec![init_log_delta.clamp(log_delta_clip.0, log_delta_clip.1); dim],
            log_delta_clip,
            log_alpha: init_alpha.ln(),
            delta_target,
            delta_opt: AdamState::new(dim, lr_delta),
            alpha_opt: AdamState::new(1, lr_alpha),
        })
    }

    pub fn delta(&self) -> Vec<f64> {
        self.log_delta.iter().map(|l| l.exp()).collect()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn mean_delta(&self) -> f64 {
        self.log_delta.iter().map(|l| l.exp()).sum::<f64>() / self.log_delta.len() as f64
    }

    /// Adam step on δ̃ followed by the clip.
    pub fn step_log_delta(&mut self, grad: &[f64], max_grad_norm: f64, lr_multiplier: f64) -> Result<()> {
        let mut p = ParamVector::from_vec(self.log_delta.clone());
        adam_step(
            &mut self.delta_opt,
            &mut p,
            &ParamVector::from_vec(grad.to_vec()),
            max_grad_norm,
            lr_multiplier,
        )?;
        let (lo, hi) = self.log_delta_clip;
        self.log_delta = p.into_vec().into_iter().map(|x| x.clamp(lo, hi)).collect();
        Ok(())
    }

    pub fn step_temperature(&mut self, lr_multiplier: f64) -> Result<f64> {
        let (a, loss) = temperature_update(
            self.log_alpha,
            &self.log_delta,
            self.delta_target,
            &mut self.alpha_opt,
            lr_multiplier,
        )?;
        self.log_alpha = a;
        Ok(loss)
    }
}

/// Mini-batch settings for `critic_update`.
#[derive(Clone, Copy, Debug)]
pub struct CriticSchedule {
    pub batch_size: usize,
    pub iters: usize,
    pub max_grad_norm: f64,
    pub lr_multiplier: f64,
}

/// MSE of a critic on given states.
pub fn critic_loss(spec: &MlpSpec, params: &ParamVector, states: &Batch, targets: &[f64]) -> Result<f64> {
    check_len("critic targets", states.rows(), targets.len())?;
    let v = mlp_forward(params, spec, states)?;
    let n = targets.len().max(1) as f64;
    Ok(v.as_slice().iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `iters` passes over shuffled mini-batches; returns the mean mini-batch loss.
pub fn critic_update<R: Rng + ?Sized>(
    spec: &MlpSpec,
    params: &mut ParamVector,
    opt: &mut AdamState,
    states: &Batch,
    targets: &[f64],
    sched: CriticSchedule,
    rng: &mut R,
) -> Result<f64> {
    check_len("critic targets", states.rows(), targets.len())?;
    if spec.output_dim != 1 {
        return Err(Error::Invalid("critic must have a scalar output".into()));
    }
    if sched.batch_size == 0 {
        return Err(Error::Invalid("critic batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..states.rows()).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..sched.iters {
        order.shuffle(rng);
        for chunk in order.chunks(sched.batch_size) {
            let x = states.select(chunk);
            let v = mlp_forward(params, spec, &x)?;
            let b = chunk.len() as f64;
            let mut loss = 0.0;
            let mut up = Batch::zeros(chunk.len(), 1);
            for (i, &k) in chunk.iter().enumerate() {
                let diff = v.row(i)[0] - targets[k];
                loss += diff * diff;
                up.row_mut(i)[0] = 2.0 * diff / b;
            }
            loss /= b;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "critic loss".into(),
                    index: count,
                });
            }
            let (g, _) = mlp_backward(params, spec, &x, &up)?;
            adam_step(opt, params, &g, sched.max_grad_norm, sched.lr_multiplier)?;
            total += loss;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// φ' ← ρ φ' + (1 - ρ) φ.
pub fn polyak_update(target: &mut ParamVector, online: &ParamVector, rho: f64) -> Result<()> {
    check_len("polyak params", target.len(), online.len())?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!("polyak coefficient {rho} not in [0, 1]")));
    }
    for (t, o) in target.as_mut_slice().iter_mut().zip(online.as_slice()) {
        *t = rho * *t + (1.0 - rho) * o;
    }
    Ok(())
}
