//! Latent Kronecker Gaussian processes for learning-curve prediction.
//!
//! The covariance over configurations `x` and progression steps `t` is the
//! product `k1(x, x') * k2(t, t')`. On a full grid the joint Gram matrix is
//! `K1 ⊗ K2`; missing entries are handled by projecting onto the observed
//! cells, so every solve needs only Kronecker matrix-vector products and
//! memory stays at `O(n² + m²)`.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the precision for the common case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc_track;
pub mod bench;
pub mod data_io;
mod error;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod optim;
mod scalar;
pub mod transforms;

pub use error::{LkgpError, Result};
pub use kernels::{log_prior, matern52_gram, rbf_gram, ProductKernelParams};
pub use model::{
    metrics_mse_llh, Backend, BackendChoice, FitConfig, FitReport, LkgpModel, Metrics, PosteriorSampleSet,
    PredictionResult, PreparedData, TrainingData,
};
pub use scalar::Scalar;

pub type LkgpModel64 = LkgpModel<f64>;
pub type LkgpModel32 = LkgpModel<f32>;
pub type TrainingData64 = TrainingData<f64>;
pub type TrainingData32 = TrainingData<f32>;
pub type Params64 = ProductKernelParams<f64>;
pub type Params32 = ProductKernelParams<f32>;
pub type PreparedData64 = PreparedData<f64>;
pub type PreparedData32 = PreparedData<f32>;
pub type PredictionResult64 = PredictionResult<f64>;
pub type PredictionResult32 = PredictionResult<f32>;
