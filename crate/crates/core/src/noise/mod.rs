//! Label-noise models: noise matrices, synthetic corruption, and the
//! noise-adaptation heads placed on top of the base model during training.
//!
//! Conventions: a noise matrix `psi` is column-stochastic with
//! `psi[i][j] = p(noisy = i | true = j)`.

mod head;
pub mod io;
mod matrix;

pub use head::{
    apply_fixed_linear_head, extract_equivalent_noise, noise_head_backward, noise_head_forward,
    SoftmaxNoiseHead,
};
pub use matrix::{average_diagonal, corrupt_labels, BuiltNoise, NoiseFamily, NoiseMatrix, NoiseSpec};
