//! Minimal CPU convolutional network engine.
//!
//! Layers keep their own forward caches: call `forward` with
//! [`Mode::Train { record: true }`](Mode::Train) and then `backward` exactly
//! once. All arithmetic is single-threaded and deterministic for a given seed.

mod batchnorm;
mod conv;
mod gemm;
mod heads;
mod layers;
mod optim;
mod param;
mod resnet;
mod tensor;

pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use heads::{ProjectionHead, SegmentationHead};
pub use layers::{
    bilinear_resize, bilinear_resize_backward, global_avg_pool, global_avg_pool_backward,
    l2_normalize, l2_normalize_backward, Linear, MaxPool, Relu,
};
pub use optim::{cosine_lr, Sgd, SgdConfig};
pub use param::{Param, Parameterized};
pub use resnet::{EncoderConfig, ResNetEncoder};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward called on {0} without a recorded forward pass")]
    NoCache(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Forward-pass mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated. `record` keeps the
    /// caches needed for `backward`.
    Train { record: bool },
    /// Running statistics, nothing recorded.
    Eval,
}

impl Mode {
    pub fn records(self) -> bool {
        matches!(self, Mode::Train { record: true })
    }
}
