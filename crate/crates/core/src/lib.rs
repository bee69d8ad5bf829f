//! Training deep classifiers on noisily labelled data.
//!
//! The crate bundles a small from-scratch neural-network stack ([`nn`]),
//! label-noise models and noise-adaptation heads ([`noise`]), dataset
//! loaders ([`data`]) and the training/evaluation harness ([`train`]).
//! Every random draw goes through [`math::RngState`], so a run is fully
//! determined by its configuration and seed.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod math;
pub mod nn;
pub mod noise;
pub mod train;

pub use error::{Error, Result};
