//! A small sequential CNN in `f64`: convolution, ReLU, max pooling, global
//! average pooling and a linear classifier, with backpropagation and
//! momentum SGD.

mod io;
pub mod layers;
mod loss;
mod model;
mod optim;
mod tensor;
mod train;

use thiserror::Error;

pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{
    conv2d_backward, conv2d_forward, global_avg_pool_backward, global_avg_pool_forward, linear_backward, linear_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_forward,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use model::{argmax, preprocess, propagate_shapes, street_net, LayerSpec, ModelParams, Prediction, Tape};
pub use optim::{sgd_step, Sgd};
pub use tensor::Tensor;
pub use train::{history_csv, image_tensor, train, EpochStats, LabeledImage, TrainConfig};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward pass called without a matching forward cache")]
    MissingCache,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("model file: {0}")]
    ModelFile(String),
}
