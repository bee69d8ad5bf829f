//! Layer stacks, exact backpropagation and plain mini-batch SGD.

mod conv;
mod layer;
mod network;

pub use layer::{Architecture, FeatureShape, LayerSpec};
pub use network::{sgd_step, ForwardCache, Gradients, LayerParams, Network, NetworkParams};
