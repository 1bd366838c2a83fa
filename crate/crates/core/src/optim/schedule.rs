use serde::{Deserialize, Serialize};

use super::OptimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Noam,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Noam scale factor.
    pub factor: f64,
    pub warmup_steps: u64,
    pub d_model: usize,
    /// Rate used by the constant schedule.
    pub lr: f64,
}

impl ScheduleConfig {
    pub fn noam(factor: f64, warmup_steps: u64, d_model: usize) -> Self {
        Self { kind: ScheduleKind::Noam, factor, warmup_steps, d_model, lr: 0.0 }
    }

    pub fn constant(lr: f64) -> Self {
        Self { kind: ScheduleKind::Constant, factor: 1.0, warmup_steps: 1, d_model: 1, lr }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        match self.kind {
            ScheduleKind::Noam if !(self.factor > 0.0) || self.warmup_steps == 0 || self.d_model == 0 => Err(
                OptimError::Config(format!(
                    "noam schedule needs factor > 0, warmup >= 1, d_model >= 1 (got {}, {}, {})",
                    self.factor, self.warmup_steps, self.d_model
                )),
            ),
            ScheduleKind::Constant if !(self.lr >= 0.0 && self.lr.is_finite()) => {
                Err(OptimError::Config(format!("constant learning rate {} must be finite and >= 0", self.lr)))
            }
            _ => Ok(()),
        }
    }

    /// Learning rate for the 1-based update `step`.
    pub fn lr_at(&self, step: u64) -> Result<f64, OptimError> {
        match self.kind {
            ScheduleKind::Noam => noam_lr(step, self),
            ScheduleKind::Constant if step == 0 => Err(OptimError::Contract("steps are counted from 1".into())),
            ScheduleKind::Constant => Ok(self.lr),
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::noam(5.0, 25_000, 64)
    }
}

/// `factor · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: u64, cfg: &ScheduleConfig) -> Result<f64, OptimError> {
    if step == 0 {
        return Err(OptimError::Contract("noam schedule is undefined at step 0".into()));
    }
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok(cfg.factor * (cfg.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spot_value() {
        assert_eq!(noam_lr(4, &ScheduleConfig::noam(1.0, 4, 64)).unwrap(), 0.0625);
    }

    #[test]
    fn continuity_at_warmup() {
        for w in [1u64, 4, 25, 4000, 25_000] {
            let s = w as f64;
            let (a, b) = (s.powf(-0.5), s * s.powf(-1.5));
            assert!((a - b).abs() <= 1e-15, "warmup {w}: {a} vs {b}");
        }
    }

    #[test]
    fn rises_then_falls() {
        let cfg = ScheduleConfig::noam(5.0, 100, 64);
        let peak = noam_lr(100, &cfg).unwrap();
        assert!(noam_lr(1, &cfg).unwrap() < peak);
        assert!(noam_lr(99, &cfg).unwrap() < peak);
        assert!(noam_lr(101, &cfg).unwrap() < peak);
        assert!(matches!(noam_lr(0, &cfg), Err(OptimError::Contract(_))));
    }

    #[test]
    fn constant_schedule() {
        let c = ScheduleConfig::constant(0.1);
        assert_eq!(c.lr_at(1).unwrap(), 0.1);
        assert_eq!(c.lr_at(10_000).unwrap(), 0.1);
        assert!(ScheduleConfig::constant(-1.0).validate().is_err());
        assert!(ScheduleConfig::noam(0.0, 10, 64).validate().is_err());
    }

    proptest! {
        #[test]
        fn warmup_is_the_maximum(warmup in 1u64..5000, step in 1u64..20_000) {
            let cfg = ScheduleConfig::noam(2.0, warmup, 64);
            prop_assert!(noam_lr(step, &cfg).unwrap() <= noam_lr(warmup, &cfg).unwrap() * (1.0 + 1e-12));
        }
    }
}
