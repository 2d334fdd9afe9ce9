//! Minimal differentiable MLP substrate: dense layers, LayerNorm, ReLU,
//! three output heads, exact reverse-mode gradients and Adam.

mod adam;
mod matrix;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use matrix::Matrix;
pub use net::{
    backward, layer_norm, sigmoid, softplus, DenseNet, GradBuffer, Head, NetShape, Tape,
    LAYER_NORM_EPS, LOG_STD_MAX, LOG_STD_MIN, SOFTPLUS_FLOOR,
};

#[cfg(test)]
mod tests;
