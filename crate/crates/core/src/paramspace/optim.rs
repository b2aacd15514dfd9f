use serde::{Deserialize, Serialize};

use super::vector::{GradientVector, ParamVector};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Per-task training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    /// Apply the increment transform every this many epochs.
    #[serde(default = "default_ivt_interval")]
    pub ivt_interval: usize,
    #[serde(default)]
    pub regularizer_strength: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Reshuffle the training pool every epoch.
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_ivt_interval() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.0,
            seed: 0,
            ivt_interval: default_ivt_interval(),
            regularizer_strength: 0.0,
            optimizer: OptimizerKind::Sgd,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.ivt_interval == 0 {
            return Err(Error::InvalidConfig("ivt_interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if !(self.regularizer_strength >= 0.0 && self.regularizer_strength.is_finite()) {
            return Err(Error::InvalidConfig(
                "regularizer_strength must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Optimizer state carried between steps. For SGD `first` holds the
/// momentum buffer; Adam uses both moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub steps: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let second = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => vec![0.0; len],
        };
        Self {
            kind,
            steps: 0,
            first: vec![0.0; len],
            second,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.kind, self.first.len());
    }

    /// Resizes the buffers for a grown parameter vector, keeping existing
    /// entries and zero-filling the rest.
    pub fn resize(&mut self, len: usize) {
        self.first.resize(len, 0.0);
        if self.kind == OptimizerKind::Adam {
            self.second.resize(len, 0.0);
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamVector,
        grad: &GradientVector,
        cfg: &TrainConfig,
    ) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grad, cfg.learning_rate, cfg.momentum, self),
            OptimizerKind::Adam => adam_step(params, grad, cfg.learning_rate, self),
        }
    }
}

fn check(params: &ParamVector, grad: &GradientVector, state: &OptimizerState) -> Result<()> {
    params.ensure_same_layout(grad.layout())?;
    if state.first.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer state of {} entries for {} parameters",
            state.first.len(),
            params.len()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

/// Momentum SGD: `v <- momentum * v + g`, `theta <- theta - lr * v`.
pub fn sgd_step(
    params: &mut ParamVector,
    grad: &GradientVector,
    lr: f64,
    momentum: f64,
    state: &mut OptimizerState,
) -> Result<()> {
    check(params, grad, state)?;
    let g = grad.values();
    let v = &mut state.first;
    for ((p, vi), &gi) in params.values_mut().iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = momentum * *vi + gi;
        *p -= lr * *vi;
    }
    state.steps += 1;
    Ok(())
}

/// Adam with bias correction.
pub fn adam_step(
    params: &mut ParamVector,
    grad: &GradientVector,
    lr: f64,
    state: &mut OptimizerState,
) -> Result<()> {
    check(params, grad, state)?;
    if state.second.len() != state.first.len() {
        return Err(Error::Shape(
            "adam state is missing its second moment".into(),
        ));
    }
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let g = grad.values();
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let gi = g[i];
        let m = ADAM_BETA1 * state.first[i] + (1.0 - ADAM_BETA1) * gi;
        let v = ADAM_BETA2 * state.second[i] + (1.0 - ADAM_BETA2) * gi * gi;
        state.first[i] = m;
        state.second[i] = v;
        *p -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}
