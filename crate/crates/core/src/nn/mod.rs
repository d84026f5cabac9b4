//! Tensor and layer core: forward passes, input gradients under several
//! ReLU backward rules, and a small SGD trainer.

mod model;
pub mod ops;
mod tensor;
mod train;

pub use model::{
    activation_signature, fd_gradient, grad_wrt_input, min_relu_margin, InitScheme,
    LayerDescriptor, LayerKind, Model,
};
pub use ops::{ReluBackwardMode, RESCALE_EPSILON};
pub use tensor::Tensor;
pub use train::{accuracy, train, train_with, Examples, TrainConfig};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-3;
