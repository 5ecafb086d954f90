use serde::{Deserialize, Serialize};

use crate::error::{LkgpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub llh: f64,
    pub count: usize,
}

/// Mean squared error of the predictive means and mean Gaussian
/// log-density of the truths under the per-point predictive moments.
pub fn metrics_mse_llh(mean: &[f64], variance: &[f64], truth: &[f64]) -> Result<Metrics> {
    let n = truth.len();
    if mean.len() != n || variance.len() != n {
        return Err(LkgpError::dims("metrics", n, mean.len().min(variance.len())));
    }
    if n == 0 {
        return Err(LkgpError::Invalid("metrics need at least one point".into()));
    }
    if let Some(v) = variance.iter().find(|v| !(**v > 0.0)) {
        return Err(LkgpError::Invalid(format!("predictive variance {v} is not positive")));
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let (mut se, mut ll) = (0.0, 0.0);
    for ((&mu, &var), &y) in mean.iter().zip(variance).zip(truth) {
        let r = y - mu;
        se += r * r;
        ll += -0.5 * (ln2pi + var.ln() + r * r / var);
    }
    Ok(Metrics {
        mse: se / n as f64,
        llh: ll / n as f64,
        count: n,
    })
}
