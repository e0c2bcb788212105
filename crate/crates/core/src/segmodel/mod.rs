//! Two-class burned-area segmentation: residual encoder, pyramid-pooling
//! bottleneck with skip-connected decoder, training and inference.

mod config;
mod loss;
mod model;
mod network;
pub mod ops;
mod optim;
mod train;
mod weights;

pub use config::{LossKind, ModelConfig};
pub use loss::{loss_and_grad, LossValue};
pub use model::{binarize, EpochRecord, SegmentationModel};
pub use network::{Mode, Network};
pub use optim::Adam;
pub use train::{carve_holdout, train};
pub use weights::{export_weights, import_weights, WEIGHT_FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("expected input of shape {expected:?}, got {found:?}")]
    ShapeError {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("no training patches")]
    NoTrainingData,
    #[error("weight file format {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt weight file: {0}")]
    CorruptFile(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
