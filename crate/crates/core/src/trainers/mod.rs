//! Task-sequential training drivers with an optional increment-transform
//! hook.
//!
//! Every archetype shares one loop: append the task's head columns, run
//! mini-batch epochs while estimating the Fisher diagonal from the data-loss
//! gradients, and, from the second task on, periodically pull the increment
//! back towards the previous solution. The archetypes differ only in the
//! training pool and whether the Fisher-weighted anchor penalty is active.

mod objective;
mod run;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::FisherMode;
use crate::paramspace::{Activation, HeadInit, TrainConfig};
use crate::taskdata::MemoryConfig;

pub use objective::{objective_and_grad, AnchorPenalty};
pub use run::{
    derive_seed, run_sequence, train_joint_mtl, IvtFiring, LearnerState, RunFailure, RunRecord,
    TaskCheckpoint, Trainer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// Plain fine-tuning on each new task.
    Naive,
    /// Fine-tuning with the Fisher-weighted anchor penalty.
    QuadReg,
    /// Fine-tuning on the task plus replayed exemplars.
    Replay,
    QuadRegReplay,
    /// Incremental training with every earlier task's full training split.
    FullReplayOracle,
    /// One run over the union of all tasks seen so far, from scratch.
    JointMtl,
}

impl Archetype {
    pub fn uses_memory(self) -> bool {
        matches!(self, Archetype::Replay | Archetype::QuadRegReplay)
    }

    /// Whether the anchor penalty applies when the strength is positive.
    pub fn penalized(self) -> bool {
        matches!(
            self,
            Archetype::QuadReg | Archetype::QuadRegReplay | Archetype::FullReplayOracle
        )
    }
}

/// Fisher used by the increment transform when it fires mid-task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvtFisherSource {
    /// The most recently finished epoch's estimate.
    #[default]
    Latest,
    /// Mean of every finished epoch's estimate for the current task.
    RunningMean,
}

/// Which classes take part in the training softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMask {
    /// Every class seen so far.
    #[default]
    Seen,
    /// Only the current task's classes.
    Current,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32],
            activation: Activation::Relu,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub archetype: Archetype,
    #[serde(default)]
    pub use_ivt: bool,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Exemplar memory; replay archetypes fall back to the default budget.
    #[serde(default)]
    pub memory: Option<MemoryConfig>,
    #[serde(default)]
    pub fisher_mode: FisherMode,
    #[serde(default)]
    pub ivt_fisher: IvtFisherSource,
    #[serde(default = "default_true")]
    pub reset_optimizer_each_task: bool,
    #[serde(default = "default_true")]
    pub reset_optimizer_on_ivt: bool,
    #[serde(default)]
    pub head_mask: HeadMask,
    #[serde(default)]
    pub head_init: HeadInit,
}

impl MethodSpec {
    pub fn new(archetype: Archetype, use_ivt: bool, model: ModelSpec, train: TrainConfig) -> Self {
        Self {
            archetype,
            use_ivt,
            model,
            train,
            memory: None,
            fisher_mode: FisherMode::default(),
            ivt_fisher: IvtFisherSource::default(),
            reset_optimizer_each_task: true,
            reset_optimizer_on_ivt: true,
            head_mask: HeadMask::default(),
            head_init: HeadInit::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.model.hidden_dims.contains(&0) {
            return Err(Error::InvalidSpec("hidden layer of width 0".into()));
        }
        if self.archetype.uses_memory() {
            if let Some(m) = &self.memory {
                if m.per_class_budget == 0 {
                    return Err(Error::InvalidConfig("memory budget must be >= 1".into()));
                }
            }
        }
        if self.head_mask == HeadMask::Current
            && !matches!(self.archetype, Archetype::Naive | Archetype::QuadReg)
        {
            return Err(Error::InvalidConfig(
                "a current-task head mask only suits archetypes that train on the new task alone"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Memory settings in effect, `None` for archetypes that do not replay.
    pub fn effective_memory(&self) -> Option<MemoryConfig> {
        if self.archetype.uses_memory() {
            Some(self.memory.clone().unwrap_or_default())
        } else {
            None
        }
    }

    pub fn penalty_strength(&self) -> f64 {
        if self.archetype.penalized() {
            self.train.regularizer_strength
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests;
