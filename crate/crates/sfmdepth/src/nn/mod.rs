//! A small convolutional depth network with hand-written backpropagation.

pub mod model;
pub mod ops;
pub mod optim;

pub use model::{DepthNet, LayerKind, ModelConfig, Normalizer, Param, Trace};
pub use optim::Sgd;
