//! A small float64 CNN framework: layers, exact backpropagation, Adam,
//! class-weighted cross-entropy, early stopping and evaluation.

mod adam;
mod eval;
pub mod io;
mod layer;
mod loss;
mod model;
mod tensor;
mod train;

use thiserror::Error;

pub use adam::{adam_update, Adam, AdamConfig};
pub use eval::{argmax2, evaluate, EvalReport};
pub use layer::{architecture_with_filters, default_architecture, max_pool, Conv1d, Dense, Layer, LayerSpec, Shape};
pub use loss::{class_weights_from, cross_entropy, softmax, PROB_FLOOR};
pub use model::{ForwardPass, Gradients, Model, NUM_CLASSES};
pub use tensor::Tensor;
pub use train::{train, ClassWeighting, EarlyStopping, EpochStats, History, Progress, TrainConfig, TrainSpec};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite tensor value")]
    NonFinite,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("class {0} has no examples")]
    EmptyClass(u8),
    #[error("training and validation sets must be non-empty")]
    EmptySet,
    #[error("model is frozen")]
    NotTrainable,
    #[error("not a float model file")]
    BadMagic,
    #[error("unsupported float model version {0}")]
    BadVersion(u32),
    #[error("float model file ends early")]
    UnexpectedEof,
    #[error("corrupt float model: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
