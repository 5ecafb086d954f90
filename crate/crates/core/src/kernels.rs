//! Product kernel over (configuration, progression): a unit-variance RBF
//! kernel with one lengthscale per hyperparameter, times a Matérn-5/2 kernel
//! over the transformed progression carrying the only output scale.
//!
//! Every parameter is stored as its logarithm. The flat parameter order is
//! `[rbf log-lengthscales (d), matern log-lengthscale, matern log-outputscale,
//! log-noise]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LkgpError, Result};
use crate::scalar::Scalar;

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ProductKernelParams<T: Scalar> {
    pub rbf_log_lengthscales: Vec<T>,
    pub matern_log_lengthscale: T,
    pub matern_log_outputscale: T,
    pub log_noise: T,
}

impl<T: Scalar> ProductKernelParams<T> {
    /// Starting point for optimization: priors' means where a prior exists,
    /// a quarter of the unit progression interval and unit output scale for
    /// the Matérn factor.
    pub fn initial(d: usize) -> Self {
        let prior = PriorSpec::for_dim(d);
        Self {
            rbf_log_lengthscales: vec![T::lit(prior.lengthscale_mean); d],
            matern_log_lengthscale: T::lit(0.25f64.ln()),
            matern_log_outputscale: T::zero(),
            log_noise: T::lit(prior.noise_mean),
        }
    }

    /// Hyperparameter dimensionality `d`.
    pub fn dim(&self) -> usize {
        self.rbf_log_lengthscales.len()
    }

    /// `d + 3`.
    pub fn num_params(&self) -> usize {
        self.dim() + 3
    }

    pub fn matern_lengthscale_index(&self) -> usize {
        self.dim()
    }

    pub fn outputscale_index(&self) -> usize {
        self.dim() + 1
    }

    pub fn noise_index(&self) -> usize {
        self.dim() + 2
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut v = self.rbf_log_lengthscales.clone();
        v.extend([self.matern_log_lengthscale, self.matern_log_outputscale, self.log_noise]);
        v
    }

    pub fn from_slice(d: usize, v: &[T]) -> Result<Self> {
        if v.len() != d + 3 {
            return Err(LkgpError::dims("kernel parameter vector", d + 3, v.len()));
        }
        if v.iter().any(|x| !x.is_finite_val()) {
            return Err(LkgpError::Invalid("kernel parameters must be finite".into()));
        }
        Ok(Self {
            rbf_log_lengthscales: v[..d].to_vec(),
            matern_log_lengthscale: v[d],
            matern_log_outputscale: v[d + 1],
            log_noise: v[d + 2],
        })
    }

    /// Noise variance `σ²` in standardized output units.
    pub fn noise(&self) -> T {
        self.log_noise.exp()
    }

    /// Signal variance of the Matérn factor.
    pub fn outputscale(&self) -> T {
        self.matern_log_outputscale.exp()
    }
}

/// RBF Gram matrix `exp(-½ Σₖ (x_ik − x2_jk)² / ℓₖ²)` between rows of `x`
/// and rows of `x2`.
pub fn rbf_gram<T: Scalar>(x: &DMatrix<T>, x2: &DMatrix<T>, log_lengthscales: &[T]) -> Result<DMatrix<T>> {
    let d = log_lengthscales.len();
    if d == 0 {
        return Err(LkgpError::Invalid("RBF kernel needs d >= 1".into()));
    }
    if x.ncols() != d {
        return Err(LkgpError::dims("rbf_gram inputs", d, x.ncols()));
    }
    if x2.ncols() != d {
        return Err(LkgpError::dims("rbf_gram inputs", d, x2.ncols()));
    }
    let inv_ls: Vec<T> = log_lengthscales.iter().map(|l| (-*l).exp()).collect();
    let half = T::lit(0.5);
    Ok(DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| {
        let mut sq = T::zero();
        for k in 0..d {
            let diff = (x[(i, k)] - x2[(j, k)]) * inv_ls[k];
            sq += diff * diff;
        }
        (-half * sq.max(T::zero())).exp()
    }))
}

#[inline]
fn matern52_scaled<T: Scalar>(s: T) -> T {
    (T::one() + s + s * s / T::lit(3.0)) * (-s).exp()
}

/// Matérn-5/2 Gram matrix `σ² (1 + s + s²/3) e^{−s}` with `s = √5 |t − t'| / ℓ`.
pub fn matern52_gram<T: Scalar>(t: &[T], t2: &[T], log_lengthscale: T, log_outputscale: T) -> DMatrix<T> {
    let scale = log_outputscale.exp();
    let c = T::lit(SQRT5) * (-log_lengthscale).exp();
    DMatrix::from_fn(t.len(), t2.len(), |i, j| {
        let s = c * (t[i] - t2[j]).abs();
        scale * matern52_scaled(s)
    })
}

/// Derivative of the joint covariance with respect to one log-parameter.
/// Each kernel parameter touches exactly one Kronecker factor; noise only
/// shifts the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum GramDerivative<T: Scalar> {
    /// `∂K₁`, with `K₂` unchanged.
    Left(DMatrix<T>),
    /// `∂K₂`, with `K₁` unchanged.
    Right(DMatrix<T>),
    /// `∂(σ² I) / ∂ log σ² = σ² I` on the observed block.
    Noise,
}

/// Analytic derivatives of `K₁ = k₁(X, X)` and `K₂ = k₂(t, t)` with respect
/// to each log-parameter, in flat parameter order.
pub fn gram_grads<T: Scalar>(
    x: &DMatrix<T>,
    t: &[T],
    params: &ProductKernelParams<T>,
) -> Result<Vec<GramDerivative<T>>> {
    let d = params.dim();
    let k1 = rbf_gram(x, x, &params.rbf_log_lengthscales)?;
    let mut out = Vec::with_capacity(d + 3);
    for k in 0..d {
        let inv_ls2 = (-params.rbf_log_lengthscales[k] * T::lit(2.0)).exp();
        out.push(GramDerivative::Left(DMatrix::from_fn(
            k1.nrows(),
            k1.ncols(),
            |i, j| {
                let diff = x[(i, k)] - x[(j, k)];
                k1[(i, j)] * diff * diff * inv_ls2
            },
        )));
    }

    let scale = params.outputscale();
    let c = T::lit(SQRT5) * (-params.matern_log_lengthscale).exp();
    let third = T::lit(1.0 / 3.0);
    let m = t.len();
    // ∂/∂log ℓ of σ²(1+s+s²/3)e^{-s} with s ∝ 1/ℓ is σ² s²(1+s)/3 e^{-s}
    out.push(GramDerivative::Right(DMatrix::from_fn(m, m, |i, j| {
        let s = c * (t[i] - t[j]).abs();
        scale * s * s * (T::one() + s) * third * (-s).exp()
    })));
    out.push(GramDerivative::Right(matern52_gram(
        t,
        t,
        params.matern_log_lengthscale,
        params.matern_log_outputscale,
    )));
    out.push(GramDerivative::Noise);
    Ok(out)
}

/// Log-normal priors on the RBF lengthscales and the noise variance, stated
/// as normal densities on the log-parameters. Matérn parameters are flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub lengthscale_mean: f64,
    pub lengthscale_std: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
}

impl PriorSpec {
    pub fn for_dim(d: usize) -> Self {
        Self {
            lengthscale_mean: std::f64::consts::SQRT_2 + 0.5 * (d.max(1) as f64).ln(),
            lengthscale_std: 3f64.sqrt(),
            noise_mean: -4.0,
            noise_std: 1.0,
        }
    }
}

fn normal_logpdf<T: Scalar>(x: T, mean: f64, std: f64) -> (T, T) {
    let z = (x - T::lit(mean)) / T::lit(std);
    let norm = T::lit(std.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
    (-T::lit(0.5) * z * z - norm, -z / T::lit(std))
}

/// Log prior density and its gradient over all `d + 3` log-parameters.
pub fn log_prior<T: Scalar>(params: &ProductKernelParams<T>, d: usize) -> Result<(T, Vec<T>)> {
    if d == 0 || params.dim() != d {
        return Err(LkgpError::dims("log_prior", d, params.dim()));
    }
    let spec = PriorSpec::for_dim(d);
    let mut grad = vec![T::zero(); d + 3];
    let mut value = T::zero();
    for (k, &l) in params.rbf_log_lengthscales.iter().enumerate() {
        let (v, g) = normal_logpdf(l, spec.lengthscale_mean, spec.lengthscale_std);
        value += v;
        grad[k] = g;
    }
    let (v, g) = normal_logpdf(params.log_noise, spec.noise_mean, spec.noise_std);
    value += v;
    grad[d + 2] = g;
    Ok((value, grad))
}
