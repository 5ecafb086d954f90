//! The latent-Kronecker GP over learning curves: MAP training, posterior
//! means, pathwise posterior samples, and prediction metrics.

mod data;
mod fit;
mod metrics;
mod objective;
mod posterior;

use nalgebra::DMatrix;

pub use data::TrainingData;
pub use fit::{fit_params, FitConfig, FitReport};
pub use metrics::{metrics_mse_llh, Metrics};
pub use objective::{neg_map_objective, Backend, BackendChoice, ObjectiveConfig, ObjectiveValue, AUTO_EXACT_MAX};
pub use posterior::Posterior;

use crate::error::{LkgpError, Result};
use crate::kernels::ProductKernelParams;
use crate::linalg::{CgConfig, CgReport};
use crate::scalar::Scalar;
use crate::transforms::Scalers;

/// Transformed training data together with everything needed to map back to
/// the caller's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData<T: Scalar> {
    pub data: TrainingData<T>,
    pub scalers: Scalers<T>,
    /// Identifier of each configuration row, in row order.
    pub config_ids: Vec<String>,
    /// Progression grid in original units.
    pub steps: Vec<T>,
}

/// A fitted model. Predictions depend only on the stored fields, so a model
/// reloaded from disk predicts bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct LkgpModel<T: Scalar> {
    pub params: ProductKernelParams<T>,
    pub data: TrainingData<T>,
    pub scalers: Scalers<T>,
    pub config_ids: Vec<String>,
    pub steps: Vec<T>,
    pub backend: Backend,
    pub cg: CgConfig,
    pub dense_cap: usize,
    pub seed: u64,
    pub fit_report: Option<FitReport>,
}

/// `S` posterior draws on an `n* × m*` test grid, in original output units.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSampleSet<T: Scalar> {
    pub samples: Vec<DMatrix<T>>,
    pub test_x: DMatrix<T>,
    pub test_steps: Vec<T>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult<T: Scalar> {
    /// Exact posterior mean, `n* × m*`, original units.
    pub mean: DMatrix<T>,
    /// Sample variance of the Matheron draws plus observation noise.
    pub variance: DMatrix<T>,
    pub samples: Option<PosteriorSampleSet<T>>,
    pub cg: Option<CgReport>,
}

impl<T: Scalar> PredictionResult<T> {
    /// MSE and LLH of column `col` against `truth` (one value per test config).
    pub fn metrics(&self, col: usize, truth: &[f64]) -> Result<Metrics> {
        let mean: Vec<f64> = self.mean.column(col).iter().map(|v| v.as_f64()).collect();
        let var: Vec<f64> = self.variance.column(col).iter().map(|v| v.as_f64()).collect();
        metrics_mse_llh(&mean, &var, truth)
    }
}

impl<T: Scalar> LkgpModel<T> {
    /// Fits kernel parameters on prepared data.
    pub fn fit(prepared: PreparedData<T>, cfg: &FitConfig) -> Result<Self> {
        let (params, report) = fit_params(&prepared.data, cfg)?;
        Ok(Self {
            params,
            backend: report.backend,
            data: prepared.data,
            scalers: prepared.scalers,
            config_ids: prepared.config_ids,
            steps: prepared.steps,
            cg: cfg.cg,
            dense_cap: cfg.dense_cap,
            seed: cfg.seed,
            fit_report: Some(report),
        })
    }

    /// Wraps fixed parameters without optimizing.
    pub fn with_params(
        prepared: PreparedData<T>,
        params: ProductKernelParams<T>,
        backend: Backend,
        cg: CgConfig,
    ) -> Result<Self> {
        if params.dim() != prepared.data.d() {
            return Err(LkgpError::dims("kernel parameters", prepared.data.d(), params.dim()));
        }
        Ok(Self {
            params,
            data: prepared.data,
            scalers: prepared.scalers,
            config_ids: prepared.config_ids,
            steps: prepared.steps,
            backend,
            cg,
            dense_cap: crate::linalg::DEFAULT_DENSE_CAP,
            seed: 0,
            fit_report: None,
        })
    }

    pub fn posterior(&self) -> Result<Posterior<'_, T>> {
        Posterior::new(&self.params, &self.data, self.backend, self.cg, self.dense_cap)
    }

    pub fn transform_configs(&self, test_x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.scalers.input.apply(test_x)
    }

    /// Transformed progression values; training steps map to their stored
    /// transformed values exactly.
    pub fn transform_steps(&self, steps: &[T]) -> Result<Vec<T>> {
        steps
            .iter()
            .map(|&s| match self.steps.iter().position(|&g| g == s) {
                Some(j) => Ok(self.data.t()[j]),
                None => Ok(self.scalers.progression.apply(&[s])?[0]),
            })
            .collect()
    }

    /// Exact posterior mean in original output units, `n* × m*`.
    pub fn posterior_mean(&self, test_x: &DMatrix<T>, steps: &[T]) -> Result<DMatrix<T>> {
        let xs = self.transform_configs(test_x)?;
        let ts = self.transform_steps(steps)?;
        let mean = self.posterior()?.mean(&xs, &ts)?;
        Ok(mean.map(|v| self.scalers.output.invert(v)))
    }

    pub fn matheron_sample(
        &self,
        test_x: &DMatrix<T>,
        steps: &[T],
        count: usize,
        seed: u64,
    ) -> Result<PosteriorSampleSet<T>> {
        let xs = self.transform_configs(test_x)?;
        let ts = self.transform_steps(steps)?;
        let (samples, _) = self.posterior()?.sample(&xs, &ts, count, seed)?;
        Ok(self.sample_set(samples, test_x, steps, seed))
    }

    fn sample_set(
        &self,
        samples: Vec<DMatrix<T>>,
        test_x: &DMatrix<T>,
        steps: &[T],
        seed: u64,
    ) -> PosteriorSampleSet<T> {
        let out = &self.scalers.output;
        PosteriorSampleSet {
            samples: samples.into_iter().map(|s| s.map(|v| out.invert(v))).collect(),
            test_x: test_x.clone(),
            test_steps: steps.to_vec(),
            seed,
        }
    }

    /// Mean from the exact posterior, variance from `count` Matheron samples
    /// plus observation noise.
    pub fn predict(
        &self,
        test_x: &DMatrix<T>,
        steps: &[T],
        count: usize,
        seed: u64,
        keep_samples: bool,
    ) -> Result<PredictionResult<T>> {
        if count < 2 {
            return Err(LkgpError::Invalid(format!(
                "predictive variance needs at least 2 samples, got {count}"
            )));
        }
        let xs = self.transform_configs(test_x)?;
        let ts = self.transform_steps(steps)?;
        let post = self.posterior()?;
        let mean = post.mean(&xs, &ts)?;
        let (samples, cg) = post.sample(&xs, &ts, count, seed)?;

        let (ns, ms) = (xs.nrows(), ts.len());
        let k = T::lit(count as f64);
        let noise = self.params.noise();
        let mut variance = DMatrix::<T>::zeros(ns, ms);
        for a in 0..ns {
            for b in 0..ms {
                let avg = samples.iter().fold(T::zero(), |acc, s| acc + s[(a, b)]) / k;
                let ss = samples
                    .iter()
                    .fold(T::zero(), |acc, s| acc + (s[(a, b)] - avg) * (s[(a, b)] - avg));
                variance[(a, b)] = ss / (k - T::one()) + noise;
            }
        }
        let out = &self.scalers.output;
        let scale2 = out.y_std * out.y_std;
        let result_samples = keep_samples.then(|| self.sample_set(samples, test_x, steps, seed));
        Ok(PredictionResult {
            mean: mean.map(|v| out.invert(v)),
            variance: variance.map(|v| v * scale2),
            samples: result_samples,
            cg: cg.or_else(|| post.cg_report().cloned()),
        })
    }

    /// Prediction at the last training step for each test configuration.
    pub fn predict_final(&self, test_x: &DMatrix<T>, count: usize, seed: u64) -> Result<PredictionResult<T>> {
        let last = *self
            .steps
            .last()
            .ok_or_else(|| LkgpError::Invalid("model has an empty progression grid".into()))?;
        self.predict(test_x, &[last], count, seed, false)
    }
}
