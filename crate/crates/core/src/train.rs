//! The epoch loop: rollout, returns, targets, actor/exploration step,
//! temperature step, critic passes, target-critic averaging.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::envs::{dynamics, policy_input, EnvBatch, ObsMode, FRAME_STACK, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, EvalResult};
use crate::nn::{adam_step, mlp_forward, AdamState, ConvSpec, LrSchedule, MlpSpec, ParamVector, PolicyNet};
use crate::rng::{self, Domain};
use crate::rollout::{self, GaussianNoise, RolloutConfig, SegmentInputs, TraceMode};
use crate::sdpg::{self, CriticSchedule, ExplorationState, SdpgLosses};

pub const METRICS_HEADER: [&str; 12] = [
    "epoch",
    "env_steps",
    "mean_nominal_return",
    "mean_aux_return",
    "mean_sigma",
    "mean_exp_delta",
    "actor_loss",
    "critic_loss",
    "temperature",
    "lr_actor",
    "lr_critic",
    "wall_time_s",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env_steps: u64,
    pub mean_nominal_return: f64,
    pub mean_aux_return: f64,
    pub mean_sigma: f64,
    pub mean_exp_delta: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub temperature: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Only filled when `log_wall_time` is set.
    pub wall_time_s: Option<f64>,
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.env_steps.to_string(),
            self.mean_nominal_return.to_string(),
            self.mean_aux_return.to_string(),
            self.mean_sigma.to_string(),
            self.mean_exp_delta.to_string(),
            self.actor_loss.to_string(),
            self.critic_loss.to_string(),
            self.temperature.to_string(),
            self.lr_actor.to_string(),
            self.lr_critic.to_string(),
            self.wall_time_s.map(|w| format!("{w:.3}")).unwrap_or_default(),
        ]
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    rollout: RolloutConfig,
    trace: TraceMode,
    pub policy: PolicyNet,
    pub theta: ParamVector,
    actor_opt: AdamState,
    pub critic: MlpSpec,
    pub phi: ParamVector,
    pub phi_target: ParamVector,
    critic_opt: AdamState,
    pub exploration: ExplorationState,
    nominal: EnvBatch,
    aux: EnvBatch,
    actor_sched: LrSchedule,
    critic_sched: LrSchedule,
    epoch: usize,
    env_steps: u64,
    pub last_losses: SdpgLosses,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let id = cfg.env.env_id;
        let seed = cfg.run.seed;
        let rollout = cfg.rollout_config();
        let act = cfg.activation()?;
        let d = dynamics::action_dim(id);
        let policy = match cfg.env.obs_mode {
            ObsMode::State => {
                let sd = dynamics::privileged_dim(id);
                PolicyNet::new(None, sd, MlpSpec::new(sd, cfg.network.actor_hidden.clone(), d, act)?)?
            }
            ObsMode::Pixels => {
                let enc = ConvSpec::desk_scale(FRAME_STACK, IMAGE_SIZE, IMAGE_SIZE)?;
                let pd = dynamics::proprio_dim(id);
                let head = MlpSpec::new(enc.feature_dim + pd, cfg.network.actor_hidden.clone(), d, act)?;
                PolicyNet::new(Some(enc), pd, head)?
            }
        };
        let theta = policy.init(&mut rng::stream(seed, Domain::Init, &[0]), cfg.network.actor_final_scale);
        let critic = MlpSpec::new(dynamics::privileged_dim(id), cfg.network.critic_hidden.clone(), 1, act)?;
        let phi = critic.init(&mut rng::stream(seed, Domain::Init, &[1]), 1.0);
        let e = &cfg.exploration;
        let exploration = ExplorationState::new(
            d,
            e.init_delta.ln(),
            (e.log_delta_min, e.log_delta_max),
            e.init_temperature,
            e.delta_target,
            cfg.optim.exploration_lr,
            cfg.optim.temperature_lr,
        )?;
        let nominal = EnvBatch::new(id, rollout.n, cfg.env.obs_mode, rng::stream_key(seed, Domain::Reset, &[0]))?;
        // auxiliaries are physics-only and always overwritten by sync
        let aux = EnvBatch::new(id, rollout.n * rollout.m, ObsMode::State, rng::stream_key(seed, Domain::Reset, &[1]))?;
        Ok(Trainer {
            trace: cfg.trace_mode()?,
            actor_sched: cfg.actor_schedule()?,
            critic_sched: cfg.critic_schedule()?,
            actor_opt: AdamState::new(theta.len(), cfg.optim.actor_lr),
            critic_opt: AdamState::new(phi.len(), cfg.optim.critic_lr),
            phi_target: phi.clone(),
            rollout,
            policy,
            theta,
            critic,
            phi,
            exploration,
            nominal,
            aux,
            epoch: 0,
            env_steps: 0,
            last_losses: SdpgLosses::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn alpha(&self) -> f64 {
        if self.cfg.exploration.actor_entropy {
            self.exploration.alpha()
        } else {
            0.0
        }
    }

    fn diverged(&self, reason: impl Into<String>) -> Error {
        Error::Diverged {
            epoch: self.epoch,
            reason: reason.into(),
        }
    }

    pub fn run_epoch(&mut self) -> Result<MetricsRow> {
        let start = Instant::now();
        let clip = self.cfg.clip();
        let scale = self.cfg.network.value_scale;
        let delta = self.exploration.delta();
        let noise = GaussianNoise { seed: self.cfg.run.seed };

        let buffer = {
            let (policy, theta) = (&self.policy, &self.theta);
            let (critic, phi_target) = (&self.critic, &self.phi_target);
            let actor = move |obs: &[crate::envs::Observation]| policy.forward(theta, &policy_input(obs)?);
            let target_critic = move |states: &crate::nn::Batch| {
                Ok(mlp_forward(phi_target, critic, states)?.as_slice().iter().map(|v| v * scale).collect())
            };
            let inputs = SegmentInputs {
                actor: &actor,
                target_critic: &target_critic,
                delta: &delta,
                clip,
                noise: &noise,
                segment: self.epoch as u64,
            };
            rollout::run_segment(&mut self.nominal, &mut self.aux, &self.rollout, &inputs)?
        };

        let returns = rollout::compute_returns(&buffer, &self.rollout, self.trace);
        let dj = sdpg::normalize_delta_j(&returns);
        let a_target = sdpg::actor_target(&buffer, &dj, clip);
        let ld_target = sdpg::exploration_target(&buffer, &dj, &self.exploration.log_delta);

        // actor and exploration
        let alpha = self.alpha();
        let input = policy_input(&buffer.observations)?;
        let loss = sdpg::actor_exploration_loss(
            &self.policy,
            &self.theta,
            &self.exploration.log_delta,
            &input,
            &a_target,
            &ld_target,
            alpha,
        )
        .map_err(|e| self.diverged(e.to_string()))?;
        let lr_actor_mult = self.actor_sched.multiplier(self.epoch, self.cfg.optim.actor_lr);
        adam_step(&mut self.actor_opt, &mut self.theta, &loss.grad_theta, self.cfg.optim.max_grad_norm, lr_actor_mult)
            .map_err(|e| self.diverged(e.to_string()))?;
        let log_delta_before = self.exploration.log_delta.clone();
        self.exploration
            .step_log_delta(&loss.grad_log_delta, self.cfg.optim.max_grad_norm, 1.0)
            .map_err(|e| self.diverged(e.to_string()))?;

        let temperature_loss = if self.cfg.exploration.auto_temperature {
            self.exploration.step_temperature(1.0).map_err(|e| self.diverged(e.to_string()))?
        } else {
            sdpg::temperature_loss(self.exploration.log_alpha, &self.exploration.log_delta, self.exploration.delta_target)
        };

        // critic
        let critic_buffer = if self.cfg.exploration.soft_critic {
            let shift = sdpg::soft_critic_reward(0.0, &log_delta_before, self.exploration.delta_target.ln(), alpha);
            buffer.with_reward_shift(shift)
        } else {
            buffer
        };
        let targets = rollout::critic_value_targets(&critic_buffer, &self.rollout);
        let p = critic_buffer.state_dim;
        let states = crate::nn::Batch::from_flat(critic_buffer.states.len() / p, p, critic_buffer.states.clone())?;
        let scaled: Vec<f64> = targets.values.iter().map(|v| v / scale).collect();
        let lr_critic_mult = self.critic_sched.multiplier(self.epoch, self.cfg.optim.critic_lr);
        let mut shuffle = rng::stream(self.cfg.run.seed, Domain::Shuffle, &[self.epoch as u64]);
        let critic_loss = sdpg::critic_update(
            &self.critic,
            &mut self.phi,
            &mut self.critic_opt,
            &states,
            &scaled,
            CriticSchedule {
                batch_size: self.cfg.optim.critic_batch,
                iters: self.cfg.optim.critic_iters,
                max_grad_norm: self.cfg.optim.max_grad_norm,
                lr_multiplier: lr_critic_mult,
            },
            &mut shuffle,
        )
        .map_err(|e| self.diverged(e.to_string()))?;
        sdpg::polyak_update(&mut self.phi_target, &self.phi, self.cfg.optim.rho)?;

        self.last_losses = SdpgLosses {
            actor_bc_loss: loss.bc,
            exploration_loss: loss.exploration,
            entropy_term: loss.entropy,
            temperature_loss,
            critic_loss,
        };
        let (nn, m) = (self.rollout.n, self.rollout.m);
        let mean_nominal_return = (0..nn).map(|n| returns.get(n, 0, 0)).sum::<f64>() / nn as f64;
        let mean_aux_return =
            (0..nn).flat_map(|n| (1..=m).map(move |j| (n, j))).map(|(n, j)| returns.get(n, j, 0)).sum::<f64>()
                / (nn * m) as f64;
        self.env_steps += (self.rollout.total_envs() * self.rollout.h) as u64;
        let row = MetricsRow {
            epoch: self.epoch,
            env_steps: self.env_steps,
            mean_nominal_return,
            mean_aux_return,
            mean_sigma: dj.mean_sigma(),
            mean_exp_delta: self.exploration.mean_delta(),
            actor_loss: loss.total(),
            critic_loss,
            temperature: self.exploration.alpha(),
            lr_actor: self.cfg.optim.actor_lr * lr_actor_mult,
            lr_critic: self.cfg.optim.critic_lr * lr_critic_mult,
            wall_time_s: self.cfg.run.log_wall_time.then(|| start.elapsed().as_secs_f64()),
        };
        if [row.mean_nominal_return, row.actor_loss, row.critic_loss, row.temperature]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(self.diverged("non-finite metric"));
        }
        self.epoch += 1;
        Ok(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            env_id: self.cfg.env.env_id,
            obs_mode: self.cfg.env.obs_mode,
            epoch: self.epoch,
            clip: self.cfg.clip(),
            policy: self.policy.clone(),
            theta: self.theta.clone(),
            critic: self.critic.clone(),
            value_scale: self.cfg.network.value_scale,
            phi: self.phi.clone(),
            phi_target: self.phi_target.clone(),
            log_delta: self.exploration.log_delta.clone(),
            log_alpha: self.exploration.log_alpha,
        }
    }

    /// Mean-action evaluation of the current policy.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalResult> {
        evaluate_policy(
            &self.policy,
            &self.theta,
            self.cfg.clip(),
            self.cfg.env.env_id,
            self.cfg.env.obs_mode,
            episodes,
            seed,
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub rows: Vec<MetricsRow>,
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("ckpt_epoch_{epoch:05}.ckpt"))
}

/// Run `f` on a pool of `workers` threads (0: rayon's default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Full training run writing metrics.csv and checkpoints into `run.out_dir`.
pub fn train(cfg: TrainConfig) -> Result<TrainSummary> {
    let workers = cfg.run.workers;
    with_workers(workers, move || train_inner(cfg))?
}

fn train_inner(cfg: TrainConfig) -> Result<TrainSummary> {
    let dir = cfg.run.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    let metrics_path = dir.join("metrics.csv");
    let csv_err = |e: csv::Error| Error::Csv {
        path: metrics_path.clone(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&metrics_path)?));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    w.flush()?;
    let epochs = cfg.run.epochs;
    let every = cfg.run.checkpoint_every;
    let mut trainer = Trainer::new(cfg)?;
    let mut rows = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let row = trainer.run_epoch()?;
        w.write_record(row.record()).map_err(csv_err)?;
        w.flush()?;
        if every > 0 && trainer.epoch() % every == 0 {
            trainer.checkpoint().save(&checkpoint_path(&dir, trainer.epoch()))?;
        }
        rows.push(row);
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    let final_checkpoint = dir.join("final.ckpt");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainSummary {
        metrics_path,
        final_checkpoint,
        rows,
    })
}
