//! Batched analytic environments with exact snapshot/restore and an optional
//! rasterized pixel observation mode.

pub mod dynamics;
mod lqr;
mod render;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dynamics::{DT, MAX_EPISODE_LEN};
pub use lqr::{lqr_gain, lqr_oracle_return, zero_controller_return, LqrGain};
pub use render::{render, Image, IMAGE_SIZE};

use crate::error::{check_len, Error, Result};
use crate::nn::{Batch, PolicyInput};
use crate::rng::{self, Domain};

pub const FRAME_STACK: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    PointMass2D,
    PendulumSwingUp,
    CartPole,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::PointMass2D => "PointMass2D",
            EnvId::PendulumSwingUp => "PendulumSwingUp",
            EnvId::CartPole => "CartPole",
        }
    }

    pub fn action_dim(self) -> usize {
        dynamics::action_dim(self)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PointMass2D" => Ok(EnvId::PointMass2D),
            "PendulumSwingUp" => Ok(EnvId::PendulumSwingUp),
            "CartPole" => Ok(EnvId::CartPole),
            other => Err(Error::Config(format!("unknown env_id {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsMode {
    State,
    Pixels,
}

impl FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "State" => Ok(ObsMode::State),
            "Pixels" => Ok(ObsMode::Pixels),
            other => Err(Error::Config(format!("unknown obs_mode {other:?}"))),
        }
    }
}

impl fmt::Display for ObsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObsMode::State => "State",
            ObsMode::Pixels => "Pixels",
        })
    }
}

/// Complete simulator state of one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub values: Vec<f64>,
    /// Steps taken in the current episode.
    pub step: u32,
}

impl EnvState {
    /// Hash of the exact bit pattern, for equality checks in tests and logs.
    pub fn bit_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in &self.values {
            v.to_bits().hash(&mut h);
        }
        self.step.hash(&mut h);
        h.finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    State(Vec<f64>),
    /// `FRAME_STACK` grayscale frames, oldest first, plus proprioception.
    Pixels { frames: Vec<f64>, proprio: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    /// Failure termination (no bootstrap).
    pub terminated: bool,
    /// Episode time limit reached.
    pub truncated: bool,
    pub observation: Observation,
    /// Critic input for the post-step state.
    pub privileged_state: Vec<f64>,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Stack observations into a network input batch.
pub fn policy_input(obs: &[Observation]) -> Result<PolicyInput> {
    match obs.first() {
        None => Ok(PolicyInput {
            images: None,
            vectors: Batch::zeros(0, 0),
        }),
        Some(Observation::State(_)) => {
            let rows: Vec<&[f64]> = obs
                .iter()
                .map(|o| match o {
                    Observation::State(v) => Ok(v.as_slice()),
                    _ => Err(Error::Invalid("mixed observation modes".into())),
                })
                .collect::<Result<_>>()?;
            Ok(PolicyInput {
                images: None,
                vectors: Batch::from_rows(&rows)?,
            })
        }
        Some(Observation::Pixels { .. }) => {
            let mut frames = Vec::with_capacity(obs.len());
            let mut proprio = Vec::with_capacity(obs.len());
            for o in obs {
                match o {
                    Observation::Pixels { frames: f, proprio: p } => {
                        frames.push(f.as_slice());
                        proprio.push(p.as_slice());
                    }
                    _ => return Err(Error::Invalid("mixed observation modes".into())),
                }
            }
            Ok(PolicyInput {
                images: Some(Batch::from_rows(&frames)?),
                vectors: Batch::from_rows(&proprio)?,
            })
        }
    }
}

/// A vector of environments stepped in lockstep.
pub trait BatchEnv {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn action_dim(&self) -> usize;
    fn privileged_dim(&self) -> usize;
    fn observe(&self, i: usize) -> Observation;
    fn privileged_state(&self, i: usize) -> Vec<f64>;
    /// Terminated or out of time; must be reset or restored before stepping.
    fn is_done(&self, i: usize) -> bool;
    fn step_batch(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StepResult>>;
    fn reset(&mut self, i: usize);
    fn snapshot(&self, indices: &[usize]) -> Result<Vec<EnvState>>;
    fn restore(&mut self, indices: &[usize], states: &[EnvState]) -> Result<()>;
}

#[derive(Clone, Debug)]
pub struct EnvBatch {
    id: EnvId,
    mode: ObsMode,
    seed: u64,
    states: Vec<EnvState>,
    resets: Vec<u64>,
    /// Per-env frame stack (pixel mode only), oldest first.
    frames: Vec<Vec<f64>>,
}

fn initial_state(id: EnvId, seed: u64, index: usize, reset: u64) -> EnvState {
    let mut r = rng::stream(seed, Domain::Reset, &[index as u64, reset]);
    let mut values = dynamics::nominal_start(id);
    for v in &mut values {
        *v += r.random_range(-dynamics::RESET_NOISE..dynamics::RESET_NOISE);
    }
    if id == EnvId::PendulumSwingUp {
        values[0] = dynamics::wrap_angle(values[0]);
    }
    EnvState { values, step: 0 }
}

fn fresh_stack(id: EnvId, state: &EnvState) -> Vec<f64> {
    let img = render(id, state);
    let mut stack = Vec::with_capacity(FRAME_STACK * img.len());
    for _ in 0..FRAME_STACK {
        stack.extend_from_slice(&img);
    }
    stack
}

fn push_frame(stack: &mut Vec<f64>, img: &[f64]) {
    stack.drain(..img.len());
    stack.extend_from_slice(img);
}

impl EnvBatch {
    /// `count` environments, each reset with independent noise derived from `seed`.
    pub fn new(id: EnvId, count: usize, mode: ObsMode, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Invalid("environment count must be >= 1".into()));
        }
        let states: Vec<EnvState> = (0..count).map(|i| initial_state(id, seed, i, 0)).collect();
        let frames = match mode {
            ObsMode::Pixels => states.iter().map(|s| fresh_stack(id, s)).collect(),
            ObsMode::State => Vec::new(),
        };
        Ok(EnvBatch {
            id,
            mode,
            seed,
            states,
            resets: vec![1; count],
            frames,
        })
    }

    pub fn id(&self) -> EnvId {
        self.id
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn state(&self, i: usize) -> &EnvState {
        &self.states[i]
    }

    /// Step only the environments in `indices` (strictly increasing); the
    /// others are left untouched. `actions[k]` drives `indices[k]`.
    pub fn step_subset(&mut self, indices: &[usize], actions: &[Vec<f64>]) -> Result<Vec<StepResult>> {
        check_len("step_subset actions", indices.len(), actions.len())?;
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("step_subset indices must be strictly increasing".into()));
        }
        let dim = dynamics::action_dim(self.id);
        for (&i, a) in indices.iter().zip(actions) {
            self.check_index(i)?;
            if a.len() != dim {
                return Err(Error::Env {
                    index: i,
                    reason: format!("action has {} dims, expected {dim}", a.len()),
                });
            }
            if let Some(k) = a.iter().position(|x| !x.is_finite()) {
                return Err(Error::Env {
                    index: i,
                    reason: format!("non-finite action component {k}"),
                });
            }
            if a.iter().any(|x| x.abs() > 1.0) {
                return Err(Error::Env {
                    index: i,
                    reason: "action outside [-1, 1]".into(),
                });
            }
            if Self::done_state(self.id, &self.states[i]) {
                return Err(Error::Env {
                    index: i,
                    reason: "stepped while done; reset first".into(),
                });
            }
        }
        let (id, mode) = (self.id, self.mode);
        let mut selected = vec![false; self.states.len()];
        for &i in indices {
            selected[i] = true;
        }
        let mut frames = self.frames.iter_mut();
        let mut work: Vec<(&mut EnvState, Option<&mut Vec<f64>>)> = Vec::with_capacity(indices.len());
        for (i, state) in self.states.iter_mut().enumerate() {
            let stack = if mode == ObsMode::Pixels { frames.next() } else { None };
            if selected[i] {
                work.push((state, stack));
            }
        }
        Ok(work
            .into_par_iter()
            .zip(actions.par_iter())
            .map(|((state, mut stack), action)| {
                let reward = dynamics::advance(id, &mut state.values, action);
                state.step += 1;
                if let Some(stack) = stack.as_deref_mut() {
                    push_frame(stack, &render(id, state));
                }
                StepResult {
                    reward,
                    terminated: dynamics::terminated(id, &state.values),
                    truncated: state.step >= MAX_EPISODE_LEN,
                    observation: Self::observation_of(id, mode, state, stack.as_deref()),
                    privileged_state: dynamics::privileged(id, &state.values),
                }
            })
            .collect())
    }

    fn observation_of(id: EnvId, mode: ObsMode, state: &EnvState, frames: Option<&Vec<f64>>) -> Observation {
        match (mode, frames) {
            (ObsMode::Pixels, Some(f)) => Observation::Pixels {
                frames: f.clone(),
                proprio: dynamics::proprio(id, &state.values),
            },
            _ => Observation::State(dynamics::privileged(id, &state.values)),
        }
    }

    fn done_state(id: EnvId, s: &EnvState) -> bool {
        dynamics::terminated(id, &s.values) || s.step >= MAX_EPISODE_LEN
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.states.len() {
            Ok(())
        } else {
            Err(Error::Env {
                index: i,
                reason: format!("index out of range for batch of {}", self.states.len()),
            })
        }
    }
}

impl BatchEnv for EnvBatch {
    fn len(&self) -> usize {
        self.states.len()
    }

    fn action_dim(&self) -> usize {
        dynamics::action_dim(self.id)
    }

    fn privileged_dim(&self) -> usize {
        dynamics::privileged_dim(self.id)
    }

    fn observe(&self, i: usize) -> Observation {
        Self::observation_of(self.id, self.mode, &self.states[i], self.frames.get(i))
    }

    fn privileged_state(&self, i: usize) -> Vec<f64> {
        dynamics::privileged(self.id, &self.states[i].values)
    }

    fn is_done(&self, i: usize) -> bool {
        Self::done_state(self.id, &self.states[i])
    }

    fn step_batch(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StepResult>> {
        check_len("step_batch actions", self.states.len(), actions.len())?;
        let all: Vec<usize> = (0..self.states.len()).collect();
        self.step_subset(&all, actions)
    }

    fn reset(&mut self, i: usize) {
        let reset = self.resets[i];
        self.resets[i] += 1;
        self.states[i] = initial_state(self.id, self.seed, i, reset);
        if self.mode == ObsMode::Pixels {
            self.frames[i] = fresh_stack(self.id, &self.states[i]);
        }
    }

    fn snapshot(&self, indices: &[usize]) -> Result<Vec<EnvState>> {
        indices
            .iter()
            .map(|&i| {
                self.check_index(i)?;
                Ok(self.states[i].clone())
            })
            .collect()
    }

    /// Restored pixel environments start a fresh frame stack from the restored state.
    fn restore(&mut self, indices: &[usize], states: &[EnvState]) -> Result<()> {
        check_len("restore states", indices.len(), states.len())?;
        let dim = dynamics::state_dim(self.id);
        for (&i, s) in indices.iter().zip(states) {
            self.check_index(i)?;
            if s.values.len() != dim {
                return Err(Error::Env {
                    index: i,
                    reason: format!("restored state has {} values, expected {dim}", s.values.len()),
                });
            }
        }
        for (&i, s) in indices.iter().zip(states) {
            self.states[i] = s.clone();
            if self.mode == ObsMode::Pixels {
                self.frames[i] = fresh_stack(self.id, s);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn creation_is_seeded_and_distinct() {
        let a = EnvBatch::new(EnvId::PointMass2D, 4, ObsMode::State, 0).unwrap();
        let b = EnvBatch::new(EnvId::PointMass2D, 4, ObsMode::State, 0).unwrap();
        let hashes: Vec<u64> = (0..4).map(|i| a.state(i).bit_hash()).collect();
        for i in 0..4 {
            assert_eq!(a.state(i), b.state(i));
            for j in 0..i {
                assert_ne!(hashes[i], hashes[j]);
            }
        }
        assert!(EnvBatch::new(EnvId::PointMass2D, 0, ObsMode::State, 0).is_err());
    }

    #[test]
    fn unknown_env_id_is_config_error() {
        assert!(matches!("Hopper".parse::<EnvId>(), Err(Error::Config(_))));
        assert_eq!("CartPole".parse::<EnvId>().unwrap(), EnvId::CartPole);
    }

    #[test]
    fn pendulum_starts_hanging_down() {
        let batch = EnvBatch::new(EnvId::PendulumSwingUp, 2000, ObsMode::State, 3).unwrap();
        let offsets: Vec<f64> = (0..2000)
            .map(|i| dynamics::wrap_angle(batch.state(i).values[0] - std::f64::consts::PI))
            .collect();
        assert!(offsets.iter().all(|o| o.abs() <= 0.1));
        let mean = offsets.iter().sum::<f64>() / 2000.0;
        let var = offsets.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>() / 1999.0;
        // uniform(-0.1, 0.1): mean 0, variance 0.01/3
        assert!(mean.abs() < 4.0 * (0.01f64 / 3.0 / 2000.0).sqrt());
        assert!((var - 0.01 / 3.0).abs() < 0.1 * 0.01 / 3.0);
    }

    #[test]
    fn pixel_start_frames_identical() {
        let batch = EnvBatch::new(EnvId::PointMass2D, 2, ObsMode::Pixels, 1).unwrap();
        match batch.observe(0) {
            Observation::Pixels { frames, proprio } => {
                let n = IMAGE_SIZE * IMAGE_SIZE;
                assert_eq!(frames.len(), FRAME_STACK * n);
                assert_eq!(frames[..n], frames[n..2 * n]);
                assert_eq!(frames[n..2 * n], frames[2 * n..]);
                assert_eq!(proprio.len(), 2);
            }
            _ => panic!("expected pixels"),
        }
    }

    #[test]
    fn frame_stack_is_oldest_first() {
        let mut batch = EnvBatch::new(EnvId::PointMass2D, 1, ObsMode::Pixels, 1).unwrap();
        let first = render(EnvId::PointMass2D, batch.state(0));
        batch.step_batch(&[vec![1.0, 1.0]]).unwrap();
        batch.step_batch(&[vec![1.0, 1.0]]).unwrap();
        let newest = render(EnvId::PointMass2D, batch.state(0));
        let Observation::Pixels { frames, .. } = batch.observe(0) else { panic!() };
        let n = IMAGE_SIZE * IMAGE_SIZE;
        assert_eq!(&frames[..n], first.as_slice());
        assert_eq!(&frames[2 * n..], newest.as_slice());
    }

    #[test]
    fn snapshot_restore_step_matches_direct_step() {
        let mut a = EnvBatch::new(EnvId::CartPole, 3, ObsMode::State, 9).unwrap();
        let mut b = EnvBatch::new(EnvId::CartPole, 3, ObsMode::State, 10).unwrap();
        let snap = a.snapshot(&[0, 1, 2]).unwrap();
        b.restore(&[0, 1, 2], &snap).unwrap();
        let acts = vec![vec![0.3], vec![-0.2], vec![0.9]];
        let ra = a.step_batch(&acts).unwrap();
        let rb = b.step_batch(&acts).unwrap();
        assert_eq!(ra, rb);
        for i in 0..3 {
            assert_eq!(a.state(i).bit_hash(), b.state(i).bit_hash());
        }
    }

    #[test]
    fn restore_clears_done_and_copies_step_counter() {
        let mut batch = EnvBatch::new(EnvId::CartPole, 2, ObsMode::State, 0).unwrap();
        let mut dead = batch.snapshot(&[1]).unwrap().remove(0);
        dead.values[2] = 0.5;
        batch.restore(&[1], &[dead]).unwrap();
        assert!(batch.is_done(1));
        assert!(batch.step_batch(&[vec![0.0], vec![0.0]]).is_err());
        let mut live = batch.snapshot(&[0]).unwrap().remove(0);
        live.step = 17;
        batch.restore(&[1], &[live.clone()]).unwrap();
        assert!(!batch.is_done(1));
        assert_eq!(batch.state(1).step, 17);
    }

    #[test]
    fn restore_rejects_wrong_dimension() {
        let mut batch = EnvBatch::new(EnvId::PointMass2D, 2, ObsMode::State, 0).unwrap();
        let bad = EnvState { values: vec![0.0; 3], step: 0 };
        assert!(batch.restore(&[0], &[bad]).is_err());
        assert!(batch.snapshot(&[5]).is_err());
    }

    #[test]
    fn non_finite_action_names_env() {
        let mut batch = EnvBatch::new(EnvId::PointMass2D, 3, ObsMode::State, 0).unwrap();
        let err = batch
            .step_batch(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![f64::NAN, 0.0]])
            .unwrap_err();
        assert!(matches!(err, Error::Env { index: 2, .. }));
    }

    #[test]
    fn batched_equals_sequential() {
        let mut batch = EnvBatch::new(EnvId::PendulumSwingUp, 4, ObsMode::State, 5).unwrap();
        let mut singles: Vec<EnvBatch> = (0..4)
            .map(|i| {
                let mut b = EnvBatch::new(EnvId::PendulumSwingUp, 1, ObsMode::State, 77).unwrap();
                b.restore(&[0], &batch.snapshot(&[i]).unwrap()).unwrap();
                b
            })
            .collect();
        for t in 0..50 {
            let acts: Vec<Vec<f64>> = (0..4).map(|i| vec![((t * 7 + i * 3) as f64 * 0.37).sin()]).collect();
            let rb = batch.step_batch(&acts).unwrap();
            for i in 0..4 {
                let rs = singles[i].step_batch(&acts[i..i + 1]).unwrap();
                assert_eq!(rs[0], rb[i]);
            }
        }
    }

    #[test]
    fn restore_nominal_into_auxiliary_tracks_for_100_steps() {
        let mut batch = EnvBatch::new(EnvId::PointMass2D, 2, ObsMode::State, 4).unwrap();
        let snap = batch.snapshot(&[0]).unwrap();
        batch.restore(&[1], &snap).unwrap();
        for t in 0..100 {
            let a = vec![(t as f64 * 0.1).sin() * 0.3, (t as f64 * 0.05).cos() * 0.2];
            let r = batch.step_batch(&[a.clone(), a]).unwrap();
            assert_eq!(r[0], r[1]);
            assert_eq!(batch.state(0).bit_hash(), batch.state(1).bit_hash());
        }
    }

    #[test]
    fn rewards_respect_documented_bounds() {
        for id in [EnvId::PointMass2D, EnvId::PendulumSwingUp, EnvId::CartPole] {
            let mut batch = EnvBatch::new(id, 8, ObsMode::State, 2).unwrap();
            let dim = batch.action_dim();
            for t in 0..400 {
                let acts: Vec<Vec<f64>> = (0..8)
                    .map(|i| (0..dim).map(|k| (((t + 3 * i + k) as f64) * 0.9).sin()).collect())
                    .collect();
                let rs = batch.step_batch(&acts).unwrap();
                for (i, r) in rs.iter().enumerate() {
                    assert!(r.reward.abs() <= dynamics::reward_bound(id), "{id} {}", r.reward);
                    if r.done() {
                        batch.reset(i);
                    }
                }
            }
        }
    }
}
