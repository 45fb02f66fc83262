//! Training, compression and bit-exact simulation of 4-bit compact MLPs.
//!
//! Every fully-connected weight matrix is represented as a linear combination
//! of four binary masks, `W = Σ ω_i B_i`, so each weight is a 4-bit code whose
//! bit `i` says whether `ω_i` is part of its value. Code `0b0000` is an exact
//! zero. The crate is organised along the path a model takes:
//!
//! - [`nn`]: a small f64 MLP engine (forward, backward, batchnorm folding) and
//!   the IDX dataset reader.
//! - [`quant`]: codebooks, entropy-constrained assignment, centroid gradients,
//!   ADAM and straight-through training.
//! - [`codec`]: the Dense4 / Bitmask / chunked-CSR layer formats, per-layer
//!   format selection and the versioned model container.
//! - [`datapath`]: a bit-exact model of the accumulate-multiply pipeline
//!   (FIFOs, adder tree, MAC array, fixed-to-float, float post-processing)
//!   with event counters.
//! - [`cost`]: operation and data-movement tallies and an energy proxy.
//! - [`pipeline`]: presets, run configuration, training loops and model
//!   compilation used by the `f4` binary and the acceptance suite.

pub mod codes;
pub mod codec;
pub mod cost;
pub mod datapath;
pub mod nn;
pub mod pipeline;
pub mod quant;

pub use codes::CodeMatrix;
