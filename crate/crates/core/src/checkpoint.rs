//! "SDPG-CKPT-v1": line-oriented text, every float stored as its IEEE-754 bits
//! in hex so a round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::{EnvId, ObsMode};
use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParamVector, PolicyNet};

pub const MAGIC: &str = "SDPG-CKPT-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub env_id: EnvId,
    pub obs_mode: ObsMode,
    pub epoch: usize,
    pub clip: (f64, f64),
    pub policy: PolicyNet,
    pub theta: ParamVector,
    pub critic: MlpSpec,
    pub value_scale: f64,
    pub phi: ParamVector,
    pub phi_target: ParamVector,
    pub log_delta: Vec<f64>,
    pub log_alpha: f64,
}

fn hex(values: &[f64]) -> String {
    let mut s = values.len().to_string();
    for v in values {
        let _ = write!(s, " {:016x}", v.to_bits());
    }
    s
}

fn unhex(line: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Checkpoint(format!("{m} in {:?}", line.chars().take(40).collect::<String>()));
    let mut parts = line.split_ascii_whitespace();
    let n: usize = parts.next().ok_or_else(|| bad("missing count"))?.parse().map_err(|_| bad("bad count"))?;
    let v: Vec<f64> = parts
        .map(|p| u64::from_str_radix(p, 16).map(f64::from_bits).map_err(|_| bad("bad hex float")))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(bad("value count mismatch"));
    }
    Ok(v)
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "env_id {}", self.env_id);
        let _ = writeln!(s, "obs_mode {}", self.obs_mode);
        let _ = writeln!(s, "epoch {}", self.epoch);
        let _ = writeln!(s, "clip {}", hex(&[self.clip.0, self.clip.1]));
        let _ = writeln!(s, "policy {}", self.policy.descriptor());
        let _ = writeln!(s, "theta {}", hex(self.theta.as_slice()));
        let _ = writeln!(s, "critic {}", self.critic.descriptor());
        let _ = writeln!(s, "value_scale {}", hex(&[self.value_scale]));
        let _ = writeln!(s, "phi {}", hex(self.phi.as_slice()));
        let _ = writeln!(s, "phi_target {}", hex(self.phi_target.as_slice()));
        let _ = writeln!(s, "log_delta {}", hex(&self.log_delta));
        let _ = writeln!(s, "log_alpha {}", hex(&[self.log_alpha]));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Checkpoint(format!("missing {MAGIC} header")));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("truncated before {key}")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::Checkpoint(format!("expected field {key}")))
        };
        let env_id: EnvId = field("env_id")?.parse().map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
        let obs_mode: ObsMode = field("obs_mode")?.parse().map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
        let epoch = field("epoch")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad epoch".into()))?;
        let clip = unhex(&field("clip")?)?;
        let policy = PolicyNet::from_descriptor(&field("policy")?)?;
        let theta = ParamVector::from_vec(unhex(&field("theta")?)?);
        let critic = MlpSpec::from_descriptor(&field("critic")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let value_scale = unhex(&field("value_scale")?)?;
        let phi = ParamVector::from_vec(unhex(&field("phi")?)?);
        let phi_target = ParamVector::from_vec(unhex(&field("phi_target")?)?);
        let log_delta = unhex(&field("log_delta")?)?;
        let log_alpha = unhex(&field("log_alpha")?)?;
        if clip.len() != 2 || value_scale.len() != 1 || log_alpha.len() != 1 {
            return Err(Error::Checkpoint("scalar field has wrong length".into()));
        }
        if theta.len() != policy.param_count() {
            return Err(Error::Checkpoint(format!(
                "theta has {} values, policy needs {}",
                theta.len(),
                policy.param_count()
            )));
        }
        if phi.len() != critic.param_count() || phi_target.len() != critic.param_count() {
            return Err(Error::Checkpoint("critic parameter count mismatch".into()));
        }
        if log_delta.len() != policy.output_dim() {
            return Err(Error::Checkpoint("log_delta length mismatch".into()));
        }
        Ok(Checkpoint {
            env_id,
            obs_mode,
            epoch,
            clip: (clip[0], clip[1]),
            policy,
            theta,
            critic,
            value_scale: value_scale[0],
            phi,
            phi_target,
            log_delta,
            log_alpha: log_alpha[0],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
