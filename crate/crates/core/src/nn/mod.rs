//! Small feed-forward networks with hand-written reverse-mode gradients.
//!
//! Layers: linear, batch normalization, ReLU, inverted dropout and
//! residual blocks of linear+BN+ReLU+dropout stages. Everything is `f64`.

mod adam;
pub mod gradcheck;
mod layers;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState, StepInfo};
pub use layers::ParamTensor;
pub use network::{LayerSpec, Network, NetworkSpec, NetworkState, StageSpec};
