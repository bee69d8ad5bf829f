//! Dense linear algebra, softmax, seeded sampling and simplex projection.

mod matrix;
mod prob;
mod rng;
mod simplex;

pub use matrix::{gemm, Matrix, Transpose};
pub use prob::{
    argmax, bernoulli_mask, sample_categorical, sample_simplex, softmax, softmax_in_place,
};
pub use rng::{RngState, Stream};
pub use simplex::{project_columns_to_simplex, project_to_simplex};
