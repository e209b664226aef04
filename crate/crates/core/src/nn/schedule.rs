use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// Linear warmup to the base rate over `warmup_epochs`, then cosine decay
    /// to the absolute rate `eta_min` at the final epoch.
    CosineWithWarmup { warmup_epochs: usize, eta_min: f64 },
    /// Linear interpolation of the multiplier from `start_frac` to `end_frac`.
    LinearDecay { start_frac: f64, end_frac: f64 },
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(kind: ScheduleKind, total_epochs: usize) -> Result<Self> {
        match kind {
            ScheduleKind::CosineWithWarmup { eta_min, .. } if !(eta_min > 0.0) => {
                return Err(Error::Invalid("cosine eta_min must be > 0".into()))
            }
            ScheduleKind::LinearDecay { start_frac, end_frac }
                if !(start_frac > 0.0 && end_frac > 0.0) =>
            {
                return Err(Error::Invalid("linear schedule fractions must be > 0".into()))
            }
            _ => {}
        }
        Ok(LrSchedule { kind, total_epochs })
    }

    pub fn constant() -> Self {
        LrSchedule {
            kind: ScheduleKind::Constant,
            total_epochs: 0,
        }
    }

    /// Multiplier applied to `base_lr` at `epoch` (0-based). Epochs past the
    /// end hold the final value.
    pub fn multiplier(&self, epoch: usize, base_lr: f64) -> f64 {
        let last = self.total_epochs.saturating_sub(1);
        let e = epoch.min(last);
        match self.kind {
            ScheduleKind::Constant => 1.0,
            ScheduleKind::LinearDecay { start_frac, end_frac } => {
                if last == 0 {
                    return start_frac;
                }
                let p = e as f64 / last as f64;
                start_frac + (end_frac - start_frac) * p
            }
            ScheduleKind::CosineWithWarmup { warmup_epochs, eta_min } => {
                let floor = eta_min / base_lr;
                let w = warmup_epochs.max(1);
                if e + 1 < w {
                    return (e + 1) as f64 / w as f64;
                }
                let start = w - 1;
                if last <= start {
                    return 1.0;
                }
                let p = (e - start) as f64 / (last - start) as f64;
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_hits_base_at_end_of_warmup_and_floor_at_end() {
        let base = 2e-3;
        let s = LrSchedule::new(
            ScheduleKind::CosineWithWarmup {
                warmup_epochs: 100,
                eta_min: 1e-5,
            },
            1000,
        )
        .unwrap();
        assert!((s.multiplier(99, base) - 1.0).abs() < 1e-15);
        assert!((s.multiplier(999, base) * base - 1e-5).abs() < 1e-15);
        assert!(s.multiplier(0, base) > 0.0);
        assert!(s.multiplier(50, base) < s.multiplier(99, base));
        for e in 0..1000 {
            assert!(s.multiplier(e, base) > 0.0);
        }
    }

    #[test]
    fn linear_endpoints() {
        let s = LrSchedule::new(
            ScheduleKind::LinearDecay {
                start_frac: 1.0,
                end_frac: 0.1,
            },
            300,
        )
        .unwrap();
        assert_eq!(s.multiplier(0, 1.0), 1.0);
        assert!((s.multiplier(299, 1.0) - 0.1).abs() < 1e-15);
        assert!((s.multiplier(5000, 1.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_positive_parameters_rejected() {
        assert!(LrSchedule::new(
            ScheduleKind::LinearDecay {
                start_frac: 1.0,
                end_frac: 0.0
            },
            10
        )
        .is_err());
    }
}
