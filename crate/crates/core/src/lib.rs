//! Streaming element-wise matrix sparsification.
//!
//! Builds a sparse, unbiased, compressible sketch `B` of a large matrix `A`
//! by sampling entries i.i.d. with replacement under a Bernstein-optimal
//! distribution, alongside the Row-L1 / L1 / L2 / trimmed-L2 baselines, the
//! epsilon-objective tower for error bounds, and an evaluation harness.

pub mod distribution;
pub mod error;
pub mod linalg;
pub mod mm;
pub mod objectives;
pub mod pipeline;
pub mod sampler;
pub mod scalar;
pub mod sketch;
pub mod spectral;
pub mod synth;
pub mod types;

pub use error::{Error, Result};

/// Concrete f64 aliases for the generic numeric core.
pub type Real = f64;
pub type RowProfile64 = types::RowProfile<f64>;
pub type MatrixStats64 = types::MatrixStats<f64>;
pub type BernsteinParams64 = distribution::BernsteinParams<f64>;
pub type SamplingPlan64 = distribution::SamplingPlan<f64>;
pub type DenseMatrix = types::SmallDenseMatrix<f64>;
