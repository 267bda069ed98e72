//! Minimal neural-network engine: tensors, layer forward/backward passes,
//! losses, SGD training, evaluation and model persistence.
//!
//! Values are `f64` in memory. Parameters are kept at `f32` precision (every
//! stored value is exactly representable as `f32`) so that the on-disk
//! format round-trips bit-exactly.

mod eval;
mod layer;
mod model;
mod persist;
mod tensor;
mod train;

pub use eval::{
    evaluate_dataset, is_error, read_results_csv, write_results_csv, EvalItem, Evaluation,
    EvaluationRow, RowFailure,
};
pub use layer::{backward_layer, forward_layer, maxpool_argmax, LayerSpec};
pub use model::{
    argmax, forward, loss_and_grad, ActivationTrace, NetworkModel, Params, Prediction, Target,
    Task,
};
pub use persist::{load_model, save_model, ARCH_FILE, FORMAT_VERSION, WEIGHTS_FILE};
pub use tensor::Tensor;
pub use train::{gradients, train_sgd, Gradients, SgdConfig, TrainReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid tensor: {0}")]
    Tensor(String),
    #[error("shape mismatch at layer {layer} ({kind}): {detail}")]
    Shape {
        layer: usize,
        kind: String,
        detail: String,
    },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("expected label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("target does not match task: {0}")]
    TargetMismatch(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite_epoch:?})")]
    Diverged {
        epoch: usize,
        last_finite_epoch: Option<usize>,
    },
    #[error("model file {path}: {cause}")]
    Persist { path: String, cause: String },
    #[error("results csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;
