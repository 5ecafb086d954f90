//! Affine input and output transformations fitted on training data.
//!
//! Hyperparameters go to the unit hypercube, progressions to a log-spaced
//! unit interval, and outputs are shifted by their maximum and divided by
//! their population standard deviation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LkgpError, Result};
use crate::scalar::Scalar;

/// Per-dimension min/range scaling to `[0, 1]`. Constant dimensions map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct InputScaler<T: Scalar> {
    pub min: Vec<T>,
    pub range: Vec<T>,
}

impl<T: Scalar> InputScaler<T> {
    pub fn fit(x: &DMatrix<T>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(LkgpError::Invalid(
                "input scaler needs at least one row and one column".into(),
            ));
        }
        let mut min = Vec::with_capacity(x.ncols());
        let mut range = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let lo = col.min();
            let hi = col.max();
            if !lo.is_finite_val() || !hi.is_finite_val() {
                return Err(LkgpError::Invalid("hyperparameters must be finite".into()));
            }
            min.push(lo);
            range.push(hi - lo);
        }
        Ok(Self { min, range })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Scales rows of `x`; values outside the training range are not clamped.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.dim() {
            return Err(LkgpError::dims("input scaler", self.dim(), x.ncols()));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| {
            if self.range[k] > T::zero() {
                (x[(i, k)] - self.min[k]) / self.range[k]
            } else {
                T::zero()
            }
        }))
    }

    /// Inverse of [`apply`](Self::apply); constant dimensions return their
    /// training value.
    pub fn invert(&self, z: &DMatrix<T>) -> Result<DMatrix<T>> {
        if z.ncols() != self.dim() {
            return Err(LkgpError::dims("input scaler", self.dim(), z.ncols()));
        }
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, k| {
            z[(i, k)] * self.range[k] + self.min[k]
        }))
    }
}

/// `(log t − log t₁) / (log t_m − log t₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ProgressionScaler<T: Scalar> {
    pub log_t1: T,
    pub log_span: T,
}

impl<T: Scalar> ProgressionScaler<T> {
    pub fn fit(t: &[T]) -> Result<Self> {
        if t.is_empty() {
            return Err(LkgpError::Invalid("progression grid is empty".into()));
        }
        if !(t[0] > T::zero()) {
            return Err(LkgpError::Invalid(format!(
                "progression steps must be positive, first step is {}",
                t[0]
            )));
        }
        if let Some(w) = t.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(LkgpError::Invalid(format!(
                "progression steps must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let log_t1 = t[0].ln();
        let mut log_span = t[t.len() - 1].ln() - log_t1;
        if !log_span.is_finite_val() {
            return Err(LkgpError::Invalid("progression steps must be finite".into()));
        }
        // a single step maps to 0, as a constant input dimension does
        if t.len() == 1 {
            log_span = T::one();
        }
        Ok(Self { log_t1, log_span })
    }

    pub fn apply(&self, t: &[T]) -> Result<Vec<T>> {
        t.iter()
            .map(|&s| {
                if s > T::zero() && s.is_finite_val() {
                    Ok((s.ln() - self.log_t1) / self.log_span)
                } else {
                    Err(LkgpError::Invalid(format!("progression step {s} is not positive")))
                }
            })
            .collect()
    }

    pub fn invert(&self, u: &[T]) -> Vec<T> {
        u.iter().map(|&v| (v * self.log_span + self.log_t1).exp()).collect()
    }
}

/// `(y − y_max) / y_std` with statistics over observed values only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OutputScaler<T: Scalar> {
    pub y_max: T,
    pub y_std: T,
}

impl<T: Scalar> OutputScaler<T> {
    /// `observed` holds only the observed values; the mask has already
    /// been applied.
    pub fn fit(observed: &[T]) -> Result<Self> {
        if observed.len() < 2 {
            return Err(LkgpError::Invalid(format!(
                "output scaler needs at least 2 observed values, got {}",
                observed.len()
            )));
        }
        if observed.iter().any(|v| !v.is_finite_val()) {
            return Err(LkgpError::Invalid("observed values must be finite".into()));
        }
        let count = T::lit(observed.len() as f64);
        let mean = observed.iter().fold(T::zero(), |a, &v| a + v) / count;
        let var = observed.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
        let y_std = var.sqrt();
        if !(y_std > T::zero()) {
            return Err(LkgpError::Invalid("observed values have zero variance".into()));
        }
        let y_max = observed.iter().fold(observed[0], |a, &v| a.max(v));
        Ok(Self { y_max, y_std })
    }

    pub fn apply(&self, y: T) -> T {
        (y - self.y_max) / self.y_std
    }

    pub fn invert(&self, z: T) -> T {
        z * self.y_std + self.y_max
    }

    /// Maps a standardized predictive mean and variance back to the
    /// original output scale.
    pub fn invert_mean_var(&self, mean: T, var: T) -> (T, T) {
        (self.invert(mean), var * self.y_std * self.y_std)
    }
}

/// The three scalers fitted together on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scalers<T: Scalar> {
    pub input: InputScaler<T>,
    pub progression: ProgressionScaler<T>,
    pub output: OutputScaler<T>,
}
