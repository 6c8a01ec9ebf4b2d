//! Minimal CNN engine for the fixed extraction architecture.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use config::{Activation, Layer, ModelConfig};
pub use error::NnError;
pub use loss::{argmax, compute_class_weights, one_hot, weighted_cross_entropy, ClassWeights};
pub use model::{backward, forward, predict, BatchGradient};
pub use optim::{AdadeltaConfig, AdadeltaState};
pub use params::{LayerParams, ModelParams};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{evaluate, init_params, train, train_from, EpochRecord, Evaluation, TrainConfig};
