//! Small fully connected softmax classifier trained on collapsed frames.
//!
//! He-initialized affine layers, optional batch normalization before each
//! ReLU, inverted dropout between layers, mean cross-entropy loss and Adam.
//! Everything runs in `f64` on a single thread and is reproducible from seeds.

mod adam;
mod checkpoint;
mod matrix;
mod model;
mod train;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, MAGIC, VERSION};
pub use matrix::Matrix;
pub use model::{
    argmax, cross_entropy, he_init, softmax, BatchNorm, Dense, ForwardCache, Gradients, MlpModel,
    Mode, ModelOptions, BN_EPSILON, BN_MOMENTUM, DEFAULT_DROPOUT, DEFAULT_HIDDEN,
};
pub use train::{evaluate, format_history, train, EpochRecord, LabeledSet, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}
