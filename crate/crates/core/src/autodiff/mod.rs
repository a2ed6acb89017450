//! Minimal reverse-mode differentiation for multilayer perceptrons and
//! scalar losses.

mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use layers::{
    evaluate, forward, layer_gradients, record_layers, Activation, DenseLayer, LayerNodes,
    Recorded,
};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use tape::focal_value_and_slope;
