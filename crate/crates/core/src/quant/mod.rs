//! Entropy-constrained 4-bit quantization.
//!
//! Each layer gets four basis coefficients `ω_0..ω_3`; the sixteen centroids
//! are the subset sums of the basis and a weight's 4-bit code says which bases
//! it includes. Assignment uses the entropy-constrained Lloyd cost with frozen
//! centroids, the basis is trained from the gradient of the dequantized
//! weights, and the full-precision shadow weights are trained through the
//! straight-through estimator.

mod adam;
mod codebook;
mod ecl;
mod ste;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use codebook::{
    centroids_of, empirical_entropy, entropy_of_histogram, init_codebook, subset_sum, Codebook, DEFAULT_OMEGA,
};
pub use ecl::{assign_with_priors, ecl_assign, nearest, EclAssignment, MAX_ECL_ROUNDS};
pub use ste::{centroid_gradient, ste_train_step, OmegaCadence, QuantizedLayer, QuantizedMlp, SteConfig, SteTrainer};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("empty input")]
    Empty,
    #[error("lambda must be a finite non-negative number, got {0}")]
    NegativeLambda(f64),
    #[error("non-finite value in {path} at index {index}")]
    NonFinite { path: String, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer {layer} has no quantized shadow pair")]
    MissingShadow { layer: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}
