use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{OptimError, ScheduleConfig, ScheduleKind};
use crate::model::ModelParams;
use crate::numerics::Tensor;

pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam driven by the Noam schedule.
    NoamAdam,
    Adadelta,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noam_adam" | "noam" => Ok(Self::NoamAdam),
            "adadelta" => Ok(Self::Adadelta),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer {other:?} (noam_adam|adadelta|adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub schedule: ScheduleConfig,
}

impl OptimizerConfig {
    pub fn noam_adam(factor: f64, warmup_steps: u64, d_model: usize) -> Self {
        Self { kind: OptimizerKind::NoamAdam, schedule: ScheduleConfig::noam(factor, warmup_steps, d_model) }
    }

    pub fn adadelta(lr: f64) -> Self {
        Self { kind: OptimizerKind::Adadelta, schedule: ScheduleConfig::constant(lr) }
    }

    pub fn adam(lr: f64) -> Self {
        Self { kind: OptimizerKind::Adam, schedule: ScheduleConfig::constant(lr) }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        self.schedule.validate()?;
        let noam = self.schedule.kind == ScheduleKind::Noam;
        if noam != (self.kind == OptimizerKind::NoamAdam) {
            return Err(OptimError::Config(format!(
                "{:?} optimizer cannot run on a {:?} schedule",
                self.kind, self.schedule.kind
            )));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters, step counter and two accumulators per
/// parameter: (first, second) moments for Adam, (E[g²], E[Δ²]) for Adadelta.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub slots: BTreeMap<String, [Vec<f64>; 2]>,
}

impl OptimState {
    /// Fresh state with zeroed accumulators for every parameter.
    pub fn new(config: OptimizerConfig, params: &ModelParams) -> Result<Self, OptimError> {
        config.validate()?;
        let slots = params.iter().map(|(k, t)| (k.to_string(), [vec![0.0; t.numel()], vec![0.0; t.numel()]])).collect();
        Ok(Self { config, step: 0, slots })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.config.kind
    }

    /// Learning rate the next update will use.
    pub fn next_lr(&self) -> Result<f64, OptimError> {
        self.config.schedule.lr_at(self.step + 1)
    }

    fn check_keys(&self, params: &ModelParams, grads: &BTreeMap<String, Tensor>) -> Result<(), OptimError> {
        let same = |a: &mut dyn Iterator<Item = &str>| a.eq(self.slots.keys().map(String::as_str));
        if !same(&mut params.keys()) || !same(&mut grads.keys().map(String::as_str)) {
            return Err(OptimError::Incompatible("optimizer, parameter and gradient key sets differ".into()));
        }
        for (k, t) in params.iter() {
            if grads[k].shape() != t.shape() || self.slots[k][0].len() != t.numel() {
                return Err(OptimError::Incompatible(format!("{k}: accumulator or gradient shape differs")));
            }
        }
        Ok(())
    }

    /// Applies one update with this state's optimizer; returns the rate used.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>) -> Result<f64, OptimError> {
        match self.kind() {
            OptimizerKind::Adadelta => adadelta_step(params, grads, self),
            OptimizerKind::Adam | OptimizerKind::NoamAdam => adam_step(params, grads, self),
        }
    }
}

fn update_params(
    params: &mut ModelParams,
    mut f: impl FnMut(&str, usize, f64) -> f64,
) -> Result<(), OptimError> {
    for (k, t) in params.iter_mut() {
        for (i, p) in t.data_mut().iter_mut().enumerate() {
            *p -= f(k, i, *p);
            if !p.is_finite() {
                return Err(OptimError::Contract(format!("{k}[{i}] became non-finite")));
            }
        }
    }
    Ok(())
}

/// `E[g²] ← ρE[g²] + (1−ρ)g²`, `Δ = √(E[Δ²]+ε)/√(E[g²]+ε) · g`,
/// `E[Δ²] ← ρE[Δ²] + (1−ρ)Δ²`, `p ← p − lr·Δ`.
pub fn adadelta_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
) -> Result<f64, OptimError> {
    if state.kind() != OptimizerKind::Adadelta {
        return Err(OptimError::Contract(format!("adadelta step on {:?} state", state.kind())));
    }
    state.check_keys(params, grads)?;
    let lr = state.next_lr()?;
    let slots = &mut state.slots;
    update_params(params, |k, i, _| {
        let g = grads[k].data()[i];
        let [eg2, ed2] = slots.get_mut(k).expect("keys checked");
        eg2[i] = ADADELTA_RHO * eg2[i] + (1.0 - ADADELTA_RHO) * g * g;
        let delta = ((ed2[i] + ADADELTA_EPS).sqrt() / (eg2[i] + ADADELTA_EPS).sqrt()) * g;
        ed2[i] = ADADELTA_RHO * ed2[i] + (1.0 - ADADELTA_RHO) * delta * delta;
        lr * delta
    })?;
    state.step += 1;
    Ok(lr)
}

/// Bias-corrected Adam.
pub fn adam_step(params: &mut ModelParams, grads: &BTreeMap<String, Tensor>, state: &mut OptimState) -> Result<f64, OptimError> {
    if state.kind() == OptimizerKind::Adadelta {
        return Err(OptimError::Contract("adam step on adadelta state".into()));
    }
    state.check_keys(params, grads)?;
    let lr = state.next_lr()?;
    let t = (state.step + 1) as i32;
    let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
    let slots = &mut state.slots;
    update_params(params, |k, i, _| {
        let g = grads[k].data()[i];
        let [m, v] = slots.get_mut(k).expect("keys checked");
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS)
    })?;
    state.step += 1;
    Ok(lr)
}

/// Checks that every pattern is a prefix of at least one parameter key.
pub fn validate_freeze(params: &ModelParams, patterns: &[String]) -> Result<(), OptimError> {
    for p in patterns {
        if p.is_empty() || !params.keys().any(|k| k.starts_with(p.as_str())) {
            return Err(OptimError::Recipe(format!("freeze pattern {p:?} matches no parameter")));
        }
    }
    Ok(())
}

/// Zeroes the gradient of every key starting with one of `patterns`.
pub fn apply_freeze(grads: &mut BTreeMap<String, Tensor>, patterns: &[String]) -> Result<(), OptimError> {
    for p in patterns {
        let mut hit = false;
        for (k, g) in grads.iter_mut() {
            if k.starts_with(p.as_str()) {
                *g = Tensor::zeros(g.shape());
                hit = true;
            }
        }
        if !hit || p.is_empty() {
            return Err(OptimError::Recipe(format!("freeze pattern {p:?} matches no parameter")));
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> Result<f64, OptimError> {
    let norm = grads.values().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.update_with(|_, v| v * s)?;
        }
    }
    Ok(norm)
}
