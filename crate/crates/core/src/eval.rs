//! Deterministic (mean-action) evaluation and the matching baselines.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::envs::{self, policy_input, BatchEnv, EnvBatch, EnvId, ObsMode, MAX_EPISODE_LEN};
use crate::error::{Error, Result};
use crate::nn::{ParamVector, PolicyNet};
use crate::rng::{self, Domain};
use crate::sdpg::squash_action;

pub const EVAL_GAMMA: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub ret: f64,
    pub discounted_return: f64,
    pub length: u32,
    pub success: bool,
    /// Task progress at the last state: distance to goal, cos θ, or steps survived.
    pub final_metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub episodes: Vec<EpisodeResult>,
}

impl EvalResult {
    fn column(&self, f: impl Fn(&EpisodeResult) -> f64) -> Vec<f64> {
        self.episodes.iter().map(f).collect()
    }

    pub fn mean_return(&self) -> f64 {
        mean(&self.column(|e| e.ret))
    }

    pub fn std_return(&self) -> f64 {
        let v = self.column(|e| e.ret);
        let m = mean(&v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64).sqrt()
    }

    pub fn mean_discounted_return(&self) -> f64 {
        mean(&self.column(|e| e.discounted_return))
    }

    pub fn success_rate(&self) -> f64 {
        mean(&self.column(|e| if e.success { 1.0 } else { 0.0 }))
    }

    pub fn mean_final_metric(&self) -> f64 {
        mean(&self.column(|e| e.final_metric))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["episode", "return", "discounted_return", "length", "success", "final_metric"])
            .map_err(io)?;
        for (i, e) in self.episodes.iter().enumerate() {
            w.write_record([
                i.to_string(),
                e.ret.to_string(),
                e.discounted_return.to_string(),
                e.length.to_string(),
                e.success.to_string(),
                e.final_metric.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn final_metric(id: EnvId, s: &[f64], length: u32) -> f64 {
    match id {
        EnvId::PointMass2D => s[0].hypot(s[1]),
        EnvId::PendulumSwingUp => s[0].cos(),
        EnvId::CartPole => length as f64,
    }
}

fn success(id: EnvId, s: &[f64], length: u32) -> bool {
    match id {
        EnvId::PointMass2D => s[0].hypot(s[1]) < 0.1,
        EnvId::PendulumSwingUp => s[0].cos() > 0.9,
        EnvId::CartPole => length >= MAX_EPISODE_LEN,
    }
}

/// Seed of the evaluation environments for `seed`; shared with the baselines
/// so every controller starts from the same states.
pub fn eval_env_seed(seed: u64) -> u64 {
    rng::stream_key(seed, Domain::Reset, &[0xE7A1])
}

/// Run `episodes` full episodes with mean actions.
pub fn evaluate_policy(
    policy: &PolicyNet,
    theta: &ParamVector,
    clip: (f64, f64),
    env_id: EnvId,
    mode: ObsMode,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    let mut batch = EnvBatch::new(env_id, episodes, mode, eval_env_seed(seed))?;
    let mut out: Vec<Option<EpisodeResult>> = vec![None; episodes];
    let mut ret = vec![0.0; episodes];
    let mut disc = vec![0.0; episodes];
    let mut live: Vec<usize> = (0..episodes).collect();
    let mut t = 0u32;
    while !live.is_empty() {
        let obs: Vec<_> = live.iter().map(|&i| batch.observe(i)).collect();
        let mean = policy.forward(theta, &policy_input(&obs)?)?;
        let actions: Vec<Vec<f64>> = (0..live.len()).map(|k| squash_action(mean.row(k), clip)).collect();
        let results = batch.step_subset(&live, &actions)?;
        let g = EVAL_GAMMA.powi(t as i32);
        let mut still = Vec::with_capacity(live.len());
        for (&i, r) in live.iter().zip(&results) {
            ret[i] += r.reward;
            disc[i] += g * r.reward;
            if r.done() {
                let s = &batch.state(i).values;
                let len = batch.state(i).step;
                out[i] = Some(EpisodeResult {
                    ret: ret[i],
                    discounted_return: disc[i],
                    length: len,
                    success: !r.terminated && success(env_id, s, len),
                    final_metric: final_metric(env_id, s, len),
                });
            } else {
                still.push(i);
            }
        }
        live = still;
        t += 1;
    }
    Ok(EvalResult {
        episodes: out.into_iter().map(|e| e.expect("every episode finishes")).collect(),
    })
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, env_id: EnvId, episodes: usize, seed: u64) -> Result<EvalResult> {
    if ckpt.env_id != env_id {
        return Err(Error::Invalid(format!(
            "checkpoint was trained on {} but evaluation asked for {env_id}",
            ckpt.env_id
        )));
    }
    evaluate_policy(&ckpt.policy, &ckpt.theta, ckpt.clip, env_id, ckpt.obs_mode, episodes, seed)
}

/// LQR returns from the same initial states `evaluate_policy` uses.
pub fn lqr_baseline(episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let batch = EnvBatch::new(EnvId::PointMass2D, episodes, ObsMode::State, eval_env_seed(seed))?;
    (0..episodes)
        .map(|i| envs::lqr_oracle_return(EnvId::PointMass2D, batch.state(i), MAX_EPISODE_LEN as usize, EVAL_GAMMA))
        .collect()
}

/// Zero-action returns from the same initial states.
pub fn zero_baseline(env_id: EnvId, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let batch = EnvBatch::new(env_id, episodes, ObsMode::State, eval_env_seed(seed))?;
    Ok((0..episodes)
        .map(|i| envs::zero_controller_return(env_id, batch.state(i), MAX_EPISODE_LEN as usize, EVAL_GAMMA))
        .collect())
}

