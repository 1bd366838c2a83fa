//! Learning-rate schedules, Adadelta/Adam updates, layer freezing,
//! resumable checkpoints and the train/fine-tune loops.

mod checkpoint;
mod optimizer;
mod schedule;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointConfig, CheckpointError, RngState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optimizer::{
    adadelta_step, adam_step, apply_freeze, clip_global_norm, validate_freeze, OptimState, OptimizerConfig,
    OptimizerKind, ADADELTA_EPS, ADADELTA_RHO, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use schedule::{noam_lr, ScheduleConfig, ScheduleKind};
pub use trainer::{finetune, train, EpochRecord, FinetuneRecipe, TrainOptions, Trainer};

use crate::eval::EvalError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("optimizer config error: {0}")]
    Config(String),
    #[error("optimizer contract violation: {0}")]
    Contract(String),
    #[error("incompatible state: {0}")]
    Incompatible(String),
    #[error("invalid recipe: {0}")]
    Recipe(String),
    #[error("utterance {utt}: {frames} frames cannot align a transcript needing {needed}")]
    Infeasible { utt: String, frames: usize, needed: usize },
    #[error("{0}")]
    EmptyData(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
