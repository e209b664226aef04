//! Nominal/auxiliary segment rollouts and TD(lambda) return-to-go.

use rayon::prelude::*;

use crate::envs::{BatchEnv, Observation};
use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::{self, Domain};
use crate::sdpg::squash_action;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutConfig {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.h == 0 {
            return Err(Error::Invalid(format!(
                "N, M, H must all be >= 1 (got {}, {}, {})",
                self.n, self.m, self.h
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Invalid(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Invalid(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        Ok(())
    }

    pub fn total_envs(&self) -> usize {
        self.n * (self.m + 1)
    }

    /// Index of auxiliary (n, j), j >= 1, inside the auxiliary batch.
    pub fn aux_index(&self, n: usize, j: usize) -> usize {
        n * self.m + (j - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    Bootstrap,
    CausalTrace,
}

/// How the trajectory of one (n, j) row continues after a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEnd {
    Continue,
    /// Failure: no bootstrap past this step.
    Terminal,
    /// Trajectory cut without failure (time limit, or auxiliary re-copied
    /// because its nominal reset): bootstrap from the pre-cut next state.
    Cut,
}

/// Source of the Gaussian perturbations for j >= 1.
pub trait NoiseSource: Sync {
    fn fill(&self, segment: u64, n: usize, j: usize, t: usize, out: &mut [f64]);
}

/// Counter-based standard normal noise keyed by (segment, n, j, t).
#[derive(Clone, Copy, Debug)]
pub struct GaussianNoise {
    pub seed: u64,
}

impl NoiseSource for GaussianNoise {
    fn fill(&self, segment: u64, n: usize, j: usize, t: usize, out: &mut [f64]) {
        let mut r = rng::stream(self.seed, Domain::Perturbation, &[segment, n as u64, j as u64, t as u64]);
        rng::fill_normal(&mut r, out);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&self, _: u64, _: usize, _: usize, _: usize, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Everything recorded during one segment. Row-major over (n, j, t).
#[derive(Clone, Debug)]
pub struct SegmentBuffer {
    pub config: RolloutConfig,
    pub action_dim: usize,
    pub state_dim: usize,
    /// Exploration std used for this segment.
    pub delta: Vec<f64>,
    /// (n, j, t, d); zero for j = 0.
    pub eps: Vec<f64>,
    pub rewards: Vec<f64>,
    pub ends: Vec<StepEnd>,
    /// V'(s_{t+1}) of the pre-reset next state; zero at `Terminal`.
    pub next_values: Vec<f64>,
    /// Privileged s_t, (n, j, t, p).
    pub states: Vec<f64>,
    /// Nominal observations, (n, t).
    pub observations: Vec<Observation>,
    /// Pre-activation mean actions, one row per (n, t).
    pub actions: Batch,
}

impl SegmentBuffer {
    pub fn row(&self, n: usize, j: usize) -> usize {
        n * (self.config.m + 1) + j
    }

    pub fn idx(&self, n: usize, j: usize, t: usize) -> usize {
        self.row(n, j) * self.config.h + t
    }

    pub fn eps_at(&self, n: usize, j: usize, t: usize) -> &[f64] {
        let d = self.action_dim;
        let i = self.idx(n, j, t) * d;
        &self.eps[i..i + d]
    }

    pub fn state_at(&self, n: usize, j: usize, t: usize) -> &[f64] {
        let p = self.state_dim;
        let i = self.idx(n, j, t) * p;
        &self.states[i..i + p]
    }

    pub fn action_at(&self, n: usize, t: usize) -> &[f64] {
        self.actions.row(n * self.config.h + t)
    }

    pub fn rows(&self) -> usize {
        self.config.total_envs()
    }

    /// Copy with every reward shifted by `shift` (soft-critic augmentation).
    pub fn with_reward_shift(&self, shift: f64) -> SegmentBuffer {
        let mut b = self.clone();
        for r in &mut b.rewards {
            *r += shift;
        }
        b
    }

    /// Order-sensitive hash of every recorded number.
    pub fn bit_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in self
            .eps
            .iter()
            .chain(&self.rewards)
            .chain(&self.next_values)
            .chain(&self.states)
            .chain(self.actions.as_slice())
        {
            v.to_bits().hash(&mut h);
        }
        for e in &self.ends {
            (*e as u8).hash(&mut h);
        }
        h.finish()
    }
}

/// 𝒥_t for every (n, j, t), laid out like the buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnTable {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub values: Vec<f64>,
}

impl ReturnTable {
    pub fn get(&self, n: usize, j: usize, t: usize) -> f64 {
        self.values[(n * (self.m + 1) + j) * self.h + t]
    }
}

/// Reset dead nominals, then copy every nominal state into its auxiliaries.
pub fn sync_auxiliaries(nominal: &mut dyn BatchEnv, aux: &mut dyn BatchEnv, config: &RolloutConfig) -> Result<()> {
    if nominal.len() != config.n || aux.len() != config.n * config.m {
        return Err(Error::Invalid(format!(
            "batch sizes ({}, {}) do not match N={}, M={}",
            nominal.len(),
            aux.len(),
            config.n,
            config.m
        )));
    }
    for n in 0..config.n {
        if nominal.is_done(n) {
            nominal.reset(n);
        }
    }
    let all: Vec<usize> = (0..config.n).collect();
    let snaps = nominal.snapshot(&all)?;
    let mut idx = Vec::with_capacity(config.n * config.m);
    let mut states = Vec::with_capacity(config.n * config.m);
    for (n, s) in snaps.iter().enumerate() {
        for j in 1..=config.m {
            idx.push(config.aux_index(n, j));
            states.push(s.clone());
        }
    }
    aux.restore(&idx, &states)
}

pub type ActorFn<'a> = dyn Fn(&[Observation]) -> Result<Batch> + 'a;
pub type CriticFn<'a> = dyn Fn(&Batch) -> Result<Vec<f64>> + 'a;

/// Everything `run_segment` needs besides the environments.
pub struct SegmentInputs<'a> {
    pub actor: &'a ActorFn<'a>,
    pub target_critic: &'a CriticFn<'a>,
    pub delta: &'a [f64],
    pub clip: (f64, f64),
    pub noise: &'a dyn NoiseSource,
    pub segment: u64,
}

fn non_finite(step: usize, nominal: usize, aux: usize, what: &str) -> Error {
    Error::Rollout {
        step,
        nominal,
        aux,
        reason: format!("non-finite {what}"),
    }
}

/// Run H steps of all N(M+1) environments. Auxiliaries are synced first.
pub fn run_segment(
    nominal: &mut dyn BatchEnv,
    aux: &mut dyn BatchEnv,
    config: &RolloutConfig,
    inputs: &SegmentInputs<'_>,
) -> Result<SegmentBuffer> {
    config.validate()?;
    sync_auxiliaries(nominal, aux, config)?;
    let (nn, m, h) = (config.n, config.m, config.h);
    let rows = config.total_envs();
    let d = nominal.action_dim();
    let p = nominal.privileged_dim();
    if inputs.delta.len() != d {
        return Err(Error::Shape {
            context: "run_segment delta",
            expected: d,
            actual: inputs.delta.len(),
        });
    }

    let mut eps = vec![0.0; rows * h * d];
    let mut rewards = vec![0.0; rows * h];
    let mut ends = vec![StepEnd::Continue; rows * h];
    let mut states = vec![0.0; rows * h * p];
    let mut next_states = vec![0.0; rows * h * p];
    let mut observations = Vec::with_capacity(nn * h);
    let mut obs_by_t: Vec<Vec<Observation>> = Vec::with_capacity(h);
    let mut actions = Batch::zeros(nn * h, d);
    let at = |n: usize, j: usize, t: usize| (n * (m + 1) + j) * h + t;

    for t in 0..h {
        let obs: Vec<Observation> = (0..nn).map(|n| nominal.observe(n)).collect();
        for n in 0..nn {
            let s = nominal.privileged_state(n);
            states[at(n, 0, t) * p..][..p].copy_from_slice(&s);
            for j in 1..=m {
                let s = aux.privileged_state(config.aux_index(n, j));
                states[at(n, j, t) * p..][..p].copy_from_slice(&s);
            }
        }
        let mean = (inputs.actor)(&obs)?;
        if mean.rows() != nn || mean.cols() != d {
            return Err(Error::Shape {
                context: "actor output",
                expected: nn * d,
                actual: mean.rows() * mean.cols(),
            });
        }
        for n in 0..nn {
            if mean.row(n).iter().any(|x| !x.is_finite()) {
                return Err(non_finite(t, n, 0, "mean action"));
            }
            actions.row_mut(n * h + t).copy_from_slice(mean.row(n));
        }
        obs_by_t.push(obs);

        // perturbations are drawn per (n, j, t) so thread order never matters
        let (noise, segment) = (inputs.noise, inputs.segment);
        let mut step_eps = vec![0.0; rows * d];
        step_eps.par_chunks_mut(d).enumerate().for_each(|(row, e)| {
            let (n, j) = (row / (m + 1), row % (m + 1));
            if j > 0 {
                noise.fill(segment, n, j, t, e);
            }
        });
        for (row, e) in step_eps.chunks(d).enumerate() {
            eps[(row * h + t) * d..][..d].copy_from_slice(e);
        }

        let mut nominal_actions = Vec::with_capacity(nn);
        let mut aux_actions = Vec::with_capacity(nn * m);
        for n in 0..nn {
            let a = mean.row(n);
            for j in 0..=m {
                let e = &eps[at(n, j, t) * d..][..d];
                let u: Vec<f64> = (0..d).map(|k| a[k] + inputs.delta[k] * e[k]).collect();
                if u.iter().any(|x| !x.is_finite()) {
                    return Err(non_finite(t, n, j, "perturbed action"));
                }
                let applied = squash_action(&u, inputs.clip);
                if j == 0 {
                    nominal_actions.push(applied);
                } else {
                    aux_actions.push(applied);
                }
            }
        }

        let nom_res = nominal.step_batch(&nominal_actions)?;
        let aux_res = aux.step_batch(&aux_actions)?;

        for n in 0..nn {
            let r = &nom_res[n];
            if !r.reward.is_finite() {
                return Err(non_finite(t, n, 0, "reward"));
            }
            let k = at(n, 0, t);
            rewards[k] = r.reward;
            next_states[k * p..][..p].copy_from_slice(&r.privileged_state);
            ends[k] = if r.terminated {
                StepEnd::Terminal
            } else if r.truncated {
                StepEnd::Cut
            } else {
                StepEnd::Continue
            };
            let nominal_done = r.done();
            for j in 1..=m {
                let ar = &aux_res[config.aux_index(n, j)];
                if !ar.reward.is_finite() {
                    return Err(non_finite(t, n, j, "reward"));
                }
                let k = at(n, j, t);
                rewards[k] = ar.reward;
                next_states[k * p..][..p].copy_from_slice(&ar.privileged_state);
                ends[k] = if ar.terminated {
                    StepEnd::Terminal
                } else if ar.truncated || nominal_done {
                    StepEnd::Cut
                } else {
                    StepEnd::Continue
                };
            }
        }

        // reset rules
        for n in 0..nn {
            if nom_res[n].done() {
                nominal.reset(n);
                let s = nominal.snapshot(&[n])?;
                let idx: Vec<usize> = (1..=m).map(|j| config.aux_index(n, j)).collect();
                let copies = vec![s[0].clone(); m];
                aux.restore(&idx, &copies)?;
            } else {
                let dead: Vec<usize> = (1..=m)
                    .map(|j| config.aux_index(n, j))
                    .filter(|&i| aux_res[i].done())
                    .collect();
                if !dead.is_empty() {
                    let s = nominal.snapshot(&[n])?;
                    aux.restore(&dead, &vec![s[0].clone(); dead.len()])?;
                }
            }
        }
    }

    let next_batch = Batch::from_flat(rows * h, p, next_states)?;
    let mut next_values = (inputs.target_critic)(&next_batch)?;
    if next_values.len() != rows * h {
        return Err(Error::Shape {
            context: "target critic output",
            expected: rows * h,
            actual: next_values.len(),
        });
    }
    for (k, v) in next_values.iter_mut().enumerate() {
        if ends[k] == StepEnd::Terminal {
            *v = 0.0;
        } else if !v.is_finite() {
            let (row, t) = (k / h, k % h);
            return Err(non_finite(t, row / (m + 1), row % (m + 1), "bootstrap value"));
        }
    }
    for n in 0..nn {
        for obs in &obs_by_t {
            observations.push(obs[n].clone());
        }
    }

    Ok(SegmentBuffer {
        config: *config,
        action_dim: d,
        state_dim: p,
        delta: inputs.delta.to_vec(),
        eps,
        rewards,
        ends,
        next_values,
        states,
        observations,
        actions,
    })
}

/// Backward TD(lambda) return-to-go over one row.
///
/// G_t = r_t + gamma ((1 - lambda) V_{t+1} + lambda G_{t+1}), with G_t = r_t at
/// a failure and G_t = r_t + gamma V_{t+1} at a cut or the final step.
pub fn td_lambda_row(rewards: &[f64], next_values: &[f64], ends: &[StepEnd], gamma: f64, lambda: f64) -> Vec<f64> {
    let h = rewards.len();
    let mut out = vec![0.0; h];
    for t in (0..h).rev() {
        let (r, v) = (rewards[t], next_values[t]);
        out[t] = match ends[t] {
            StepEnd::Terminal => r,
            StepEnd::Cut => r + gamma * v,
            StepEnd::Continue if t + 1 == h => r + gamma * v,
            StepEnd::Continue => r + gamma * ((1.0 - lambda) * v + lambda * out[t + 1]),
        };
    }
    out
}

/// Discounted sum to the end of each chunk plus the bootstrap at the chunk
/// boundary; every step in a chunk receives its chunk's return.
pub fn bootstrap_row(rewards: &[f64], next_values: &[f64], ends: &[StepEnd], gamma: f64) -> Vec<f64> {
    let h = rewards.len();
    let mut out = vec![0.0; h];
    let mut start = 0;
    while start < h {
        let mut end = start;
        while end + 1 < h && ends[end] == StepEnd::Continue {
            end += 1;
        }
        let mut ret = 0.0;
        let mut disc = 1.0;
        for t in start..=end {
            ret += disc * rewards[t];
            disc *= gamma;
        }
        if ends[end] != StepEnd::Terminal {
            ret += disc * next_values[end];
        }
        out[start..=end].fill(ret);
        start = end + 1;
    }
    out
}

pub fn compute_returns(buffer: &SegmentBuffer, config: &RolloutConfig, mode: TraceMode) -> ReturnTable {
    let h = config.h;
    let mut values = vec![0.0; buffer.rows() * h];
    values.par_chunks_mut(h).enumerate().for_each(|(row, out)| {
        let span = row * h..(row + 1) * h;
        let r = &buffer.rewards[span.clone()];
        let v = &buffer.next_values[span.clone()];
        let e = &buffer.ends[span];
        let g = match mode {
            TraceMode::CausalTrace => td_lambda_row(r, v, e, config.gamma, config.lambda),
            TraceMode::Bootstrap => bootstrap_row(r, v, e, config.gamma),
        };
        out.copy_from_slice(&g);
    });
    ReturnTable {
        n: config.n,
        m: config.m,
        h,
        values,
    }
}

/// TD(lambda) value targets for every recorded state.
pub fn critic_value_targets(buffer: &SegmentBuffer, config: &RolloutConfig) -> ReturnTable {
    compute_returns(buffer, config, TraceMode::CausalTrace)
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: StepEnd = StepEnd::Continue;

    /// Direct weighted sum of k-step returns.
    fn expanded(r: &[f64], v: &[f64], gamma: f64, lambda: f64, t: usize) -> f64 {
        let h = r.len();
        let n_step = |k: usize| {
            let mut g = 0.0;
            for l in 0..k {
                g += gamma.powi(l as i32) * r[t + l];
            }
            g + gamma.powi(k as i32) * v[t + k - 1]
        };
        let last = h - t;
        let mut total = 0.0;
        for k in 1..last {
            total += (1.0 - lambda) * lambda.powi(k as i32 - 1) * n_step(k);
        }
        total + lambda.powi(last as i32 - 1) * n_step(last)
    }

    #[test]
    fn hand_case() {
        let (r, v) = ([1.0, 2.0, 3.0], [10.0, 20.0, 30.0]);
        let g = td_lambda_row(&r, &v, &[C; 3], 0.9, 0.5);
        assert!((g[2] - 30.0).abs() < 1e-12);
        assert!((g[1] - 24.5).abs() < 1e-12);
        for t in 0..3 {
            assert!((g[t] - expanded(&r, &v, 0.9, 0.5, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_zero_is_one_step() {
        let (r, v) = ([0.3, -1.0, 2.0, 0.5], [1.0, 2.0, -3.0, 4.0]);
        let g = td_lambda_row(&r, &v, &[C; 4], 0.95, 0.0);
        for t in 0..4 {
            assert_eq!(g[t], r[t] + 0.95 * v[t]);
        }
    }

    #[test]
    fn terminal_restarts() {
        let r = [1.0, 1.0, 5.0, 7.0];
        let v = [100.0, 0.0, 100.0, 100.0];
        let ends = [C, StepEnd::Terminal, C, C];
        let g = td_lambda_row(&r, &v, &ends, 0.9, 1.0);
        assert_eq!(g[1], 1.0);
        assert_eq!(g[0], 1.0 + 0.9 * 1.0);
    }

    #[test]
    fn bootstrap_chunks() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.0, 0.0, 10.0];
        let g = bootstrap_row(&r, &v, &[C; 3], 0.5);
        assert_eq!(g, vec![1.0 + 1.0 + 0.75 + 1.25; 3]);
    }
}
