//! Training configuration: TOML with one table per concern. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{EnvId, ObsMode};
use crate::error::{Error, Result};
use crate::nn::{Activation, LrSchedule, ScheduleKind};
use crate::rollout::{RolloutConfig, TraceMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub env_id: EnvId,
    pub obs_mode: ObsMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// "causal" (per-step TD(lambda) return-to-go) or "bootstrap".
    pub trace_mode: String,
    /// Upper bound on N(M+1).
    pub env_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub exploration_lr: f64,
    pub temperature_lr: f64,
    /// "cosine", "linear" or "constant".
    pub actor_schedule: String,
    pub actor_warmup_epochs: usize,
    pub actor_lr_min: f64,
    pub critic_schedule: String,
    pub critic_lr_start_frac: f64,
    pub critic_lr_end_frac: f64,
    pub max_grad_norm: f64,
    pub critic_iters: usize,
    pub critic_batch: usize,
    /// Target critic coefficient: φ' ← ρ φ' + (1 - ρ) φ.
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSection {
    pub actor_entropy: bool,
    pub soft_critic: bool,
    pub auto_temperature: bool,
    pub delta_target: f64,
    pub init_delta: f64,
    pub log_delta_min: f64,
    pub log_delta_max: f64,
    pub init_temperature: f64,
    pub action_clip_lo: f64,
    pub action_clip_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// "elu" or "tanh".
    pub activation: String,
    /// Scale of the actor's last layer at init.
    pub actor_final_scale: f64,
    /// Critic predicts V / value_scale.
    pub value_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    pub workers: usize,
    /// Fill the wall_time_s metrics column (breaks byte-identical reruns).
    pub log_wall_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvSection,
    pub rollout: RolloutSection,
    pub optim: OptimSection,
    pub exploration: ExplorationSection,
    pub network: NetworkSection,
    pub run: RunSection,
}

impl TrainConfig {
    /// Small settings that train the toy tasks on one core in minutes.
    pub fn desk_scale(env_id: EnvId, obs_mode: ObsMode) -> Self {
        TrainConfig {
            env: EnvSection { env_id, obs_mode },
            rollout: RolloutSection {
                n: 8,
                m: 15,
                h: 16,
                gamma: 0.99,
                lambda: 0.95,
                trace_mode: "causal".into(),
                env_budget: 1 << 16,
            },
            optim: OptimSection {
                actor_lr: 3e-3,
                critic_lr: 3e-3,
                exploration_lr: 1e-2,
                temperature_lr: 1e-2,
                actor_schedule: "constant".into(),
                actor_warmup_epochs: 10,
                actor_lr_min: 1e-5,
                critic_schedule: "linear".into(),
                critic_lr_start_frac: 1.0,
                critic_lr_end_frac: 0.1,
                max_grad_norm: 1.0,
                critic_iters: 2,
                critic_batch: 256,
                rho: 0.2,
            },
            exploration: ExplorationSection {
                actor_entropy: true,
                soft_critic: false,
                auto_temperature: true,
                delta_target: 0.15,
                init_delta: 0.5,
                log_delta_min: -5.0,
                log_delta_max: 2.0,
                init_temperature: 1e-2,
                action_clip_lo: -2.0,
                action_clip_hi: 2.0,
            },
            network: NetworkSection {
                actor_hidden: vec![64, 64],
                critic_hidden: vec![128, 128],
                activation: "elu".into(),
                actor_final_scale: 0.01,
                value_scale: 10.0,
            },
            run: RunSection {
                epochs: 300,
                seed: 0,
                out_dir: PathBuf::from("runs/default"),
                checkpoint_every: 50,
                workers: 0,
                log_wall_time: false,
            },
        }
    }

    /// Shared hyperparameters of the original large-scale runs.
    pub fn paper_scale(env_id: EnvId, obs_mode: ObsMode) -> Self {
        let mut c = Self::desk_scale(env_id, obs_mode);
        c.rollout.n = 64;
        c.rollout.m = 63;
        c.rollout.gamma = 0.99;
        c.rollout.lambda = 0.95;
        c.optim.critic_batch = 4096;
        c.optim.critic_iters = 2;
        c.optim.max_grad_norm = 1.0;
        c.optim.actor_schedule = "cosine".into();
        c.optim.actor_warmup_epochs = 100;
        c.optim.actor_lr_min = 1e-5;
        c.exploration.delta_target = 0.15;
        c.exploration.init_temperature = 1e-2;
        c.network.actor_hidden = vec![256, 256];
        c.network.critic_hidden = vec![256, 256];
        c.run.epochs = 2000;
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.rollout_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.rollout.n * (self.rollout.m + 1) > self.rollout.env_budget {
            return bad(format!(
                "N(M+1) = {} exceeds env_budget {}",
                self.rollout.n * (self.rollout.m + 1),
                self.rollout.env_budget
            ));
        }
        self.trace_mode()?;
        let o = &self.optim;
        for (name, v) in [
            ("actor_lr", o.actor_lr),
            ("critic_lr", o.critic_lr),
            ("exploration_lr", o.exploration_lr),
            ("temperature_lr", o.temperature_lr),
            ("actor_lr_min", o.actor_lr_min),
            ("critic_lr_start_frac", o.critic_lr_start_frac),
            ("critic_lr_end_frac", o.critic_lr_end_frac),
            ("max_grad_norm", o.max_grad_norm),
            ("delta_target", self.exploration.delta_target),
            ("init_delta", self.exploration.init_delta),
            ("init_temperature", self.exploration.init_temperature),
            ("actor_final_scale", self.network.actor_final_scale),
            ("value_scale", self.network.value_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite positive number, got {v}"));
            }
        }
        if o.critic_batch == 0 {
            return bad("critic_batch must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&o.rho) {
            return bad(format!("rho {} not in [0, 1]", o.rho));
        }
        let e = &self.exploration;
        if !(e.action_clip_lo < e.action_clip_hi) {
            return bad("action_clip_lo must be < action_clip_hi".into());
        }
        if !(e.log_delta_min < e.log_delta_max) {
            return bad("log_delta_min must be < log_delta_max".into());
        }
        self.activation()?;
        self.actor_schedule()?;
        self.critic_schedule()?;
        Ok(())
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            n: self.rollout.n,
            m: self.rollout.m,
            h: self.rollout.h,
            gamma: self.rollout.gamma,
            lambda: self.rollout.lambda,
        }
    }

    pub fn trace_mode(&self) -> Result<TraceMode> {
        match self.rollout.trace_mode.as_str() {
            "causal" => Ok(TraceMode::CausalTrace),
            "bootstrap" => Ok(TraceMode::Bootstrap),
            other => Err(Error::Config(format!("unknown trace_mode {other:?}"))),
        }
    }

    pub fn activation(&self) -> Result<Activation> {
        match self.network.activation.as_str() {
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }

    fn schedule(&self, name: &str) -> Result<LrSchedule> {
        let o = &self.optim;
        let kind = match name {
            "cosine" => ScheduleKind::CosineWithWarmup {
                warmup_epochs: o.actor_warmup_epochs,
                eta_min: o.actor_lr_min,
            },
            "linear" => ScheduleKind::LinearDecay {
                start_frac: o.critic_lr_start_frac,
                end_frac: o.critic_lr_end_frac,
            },
            "constant" => ScheduleKind::Constant,
            other => return Err(Error::Config(format!("unknown schedule {other:?}"))),
        };
        LrSchedule::new(kind, self.run.epochs).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn actor_schedule(&self) -> Result<LrSchedule> {
        self.schedule(&self.optim.actor_schedule)
    }

    pub fn critic_schedule(&self) -> Result<LrSchedule> {
        self.schedule(&self.optim.critic_schedule)
    }

    pub fn clip(&self) -> (f64, f64) {
        (self.exploration.action_clip_lo, self.exploration.action_clip_hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_toml() {
        let c = TrainConfig::desk_scale(EnvId::PendulumSwingUp, ObsMode::Pixels);
        let back = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let mut s = TrainConfig::desk_scale(EnvId::PointMass2D, ObsMode::State).to_toml_string();
        s = s.replace("[rollout]\n", "[rollout]\nbogus = 3\n");
        let err = TrainConfig::from_toml_str(&s).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = TrainConfig::desk_scale(EnvId::PointMass2D, ObsMode::State);
        c.optim.actor_lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk_scale(EnvId::PointMass2D, ObsMode::State);
        c.exploration.action_clip_lo = 2.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk_scale(EnvId::PointMass2D, ObsMode::State);
        c.rollout.env_budget = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn paper_profile_values() {
        let c = TrainConfig::paper_scale(EnvId::PointMass2D, ObsMode::State);
        assert_eq!((c.rollout.n, c.rollout.m, c.optim.critic_batch, c.optim.critic_iters), (64, 63, 4096, 2));
        assert!(c.validate().is_ok());
    }
}
