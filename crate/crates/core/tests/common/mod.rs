#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use sdpg_core::nn::{Activation, Batch, MlpSpec, PolicyInput, PolicyNet};
use sdpg_core::oracle::synthetic_buffer;
use sdpg_core::rng::{self, Domain};
use sdpg_core::envs::{BatchEnv, EnvState, Observation, StepResult};
use sdpg_core::rollout::{run_segment, NoiseSource, ReturnTable, RolloutConfig, SegmentBuffer, SegmentInputs};
use sdpg_core::{Error, Result};
use sdpg_core::sdpg::{actor_exploration_loss, exploration_target, normalize_delta_j, ExplorationState};

/// Closed-loop δ̃/α̃ updates against a fixed quadratic objective around the
/// current mean action. Returns mean exp(δ̃) after every update.
pub fn auto_tune_history(seed: u64, updates: usize, delta_target: f64, lr_delta: f64, lr_alpha: f64) -> Vec<f64> {
    let (n, m, h, d) = (8, 15, 16, 2);
    let policy = PolicyNet::new(None, 3, MlpSpec::new(3, vec![8], d, Activation::Elu).unwrap()).unwrap();
    let mut init = rng::stream(seed, Domain::Init, &[0]);
    let theta = policy.init(&mut init, 0.01);
    let input = PolicyInput {
        images: None,
        vectors: Batch::zeros(n * h, 3),
    };
    let mut ex = ExplorationState::new(d, 0.5f64.ln(), (-5.0, 2.0), 1e-2, delta_target, lr_delta, lr_alpha).unwrap();
    let curvature = [1.0, 0.3];
    let mut history = Vec::with_capacity(updates);
    for u in 0..updates {
        let delta = ex.delta();
        let mut r = rng::stream(seed, Domain::Perturbation, &[u as u64]);
        let mut eps: Vec<f64> = (0..n * (m + 1) * h * d).map(|_| r.sample(StandardNormal)).collect();
        for nn in 0..n {
            let base = nn * (m + 1) * h * d;
            eps[base..base + h * d].iter_mut().for_each(|e| *e = 0.0);
        }
        let values = eps
            .chunks(d)
            .map(|e| -e.iter().zip(&delta).zip(&curvature).map(|((e, s), c)| c * (e * s).powi(2)).sum::<f64>())
            .collect();
        let returns = ReturnTable { n, m, h, values };
        let buffer = synthetic_buffer(n, m, h, delta, eps, Batch::zeros(n * h, d));
        let dj = normalize_delta_j(&returns);
        let ld_target = exploration_target(&buffer, &dj, &ex.log_delta);
        let a_target = Batch::zeros(n * h, d);
        let loss = actor_exploration_loss(&policy, &theta, &ex.log_delta, &input, &a_target, &ld_target, ex.alpha()).unwrap();
        ex.step_log_delta(&loss.grad_log_delta, 1.0, 1.0).unwrap();
        ex.step_temperature(1.0).unwrap();
        history.push(ex.mean_delta());
    }
    history
}

/// x' = x + 0.25 + a, reward x', terminates once x' >= 0.9, resets to 0.
pub struct Line1D {
    pub x: Vec<f64>,
    pub done: Vec<bool>,
}

impl Line1D {
    pub fn new(count: usize) -> Self {
        Line1D {
            x: vec![0.0; count],
            done: vec![false; count],
        }
    }
}

impl BatchEnv for Line1D {
    fn len(&self) -> usize {
        self.x.len()
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn privileged_dim(&self) -> usize {
        1
    }
    fn observe(&self, i: usize) -> Observation {
        Observation::State(vec![self.x[i]])
    }
    fn privileged_state(&self, i: usize) -> Vec<f64> {
        vec![self.x[i]]
    }
    fn is_done(&self, i: usize) -> bool {
        self.done[i]
    }
    fn step_batch(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StepResult>> {
        let mut out = Vec::new();
        for (i, a) in actions.iter().enumerate() {
            if self.done[i] {
                return Err(Error::Env {
                    index: i,
                    reason: "stepped while done".into(),
                });
            }
            self.x[i] += 0.25 + a[0];
            self.done[i] = self.x[i] >= 0.9;
            out.push(StepResult {
                reward: self.x[i],
                terminated: self.done[i],
                truncated: false,
                observation: self.observe(i),
                privileged_state: vec![self.x[i]],
            });
        }
        Ok(out)
    }
    fn reset(&mut self, i: usize) {
        self.x[i] = 0.0;
        self.done[i] = false;
    }
    fn snapshot(&self, indices: &[usize]) -> Result<Vec<EnvState>> {
        Ok(indices
            .iter()
            .map(|&i| EnvState {
                values: vec![self.x[i]],
                step: 0,
            })
            .collect())
    }
    fn restore(&mut self, indices: &[usize], states: &[EnvState]) -> Result<()> {
        for (&i, s) in indices.iter().zip(states) {
            self.x[i] = s.values[0];
            self.done[i] = false;
        }
        Ok(())
    }
}

/// Constant noise for one auxiliary index, zero elsewhere.
pub struct OneAux {
    pub j: usize,
    pub value: f64,
}

impl NoiseSource for OneAux {
    fn fill(&self, _: u64, _: usize, j: usize, _: usize, out: &mut [f64]) {
        out.fill(if j == self.j { self.value } else { 0.0 });
    }
}

/// One segment of `Line1D` under a zero-mean actor and V(x) = x.
pub fn run_line(cfg: &RolloutConfig, delta: f64, noise: &dyn NoiseSource) -> SegmentBuffer {
    let mut nominal = Line1D::new(cfg.n);
    let mut aux = Line1D::new(cfg.n * cfg.m);
    let actor = |obs: &[Observation]| Ok(Batch::zeros(obs.len(), 1));
    let critic = |b: &Batch| Ok(b.iter_rows().map(|r| r[0]).collect::<Vec<f64>>());
    let inputs = SegmentInputs {
        actor: &actor,
        target_critic: &critic,
        delta: &[delta],
        clip: (-2.0, 2.0),
        noise,
        segment: 0,
    };
    run_segment(&mut nominal, &mut aux, cfg, &inputs).unwrap()
}

