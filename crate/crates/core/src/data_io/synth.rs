//! Seeded synthetic datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::{CurveRecord, Dataset};
use crate::error::{LkgpError, Result};

fn config_id(i: usize) -> String {
    format!("c{i:05}")
}

/// Scaling-benchmark data: `X ~ U[0,1]^d`, `Y` i.i.d. standard normal, steps
/// `1/m, 2/m, ..., 1` (linear spacing, strictly positive), no missing values.
pub fn synth_benchmark(n: usize, m: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || m == 0 || d == 0 {
        return Err(LkgpError::Invalid("n, m and d must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n * m);
    for i in 0..n {
        let hp: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        for j in 0..m {
            records.push(CurveRecord {
                config_id: config_id(i),
                hyperparams: hp.clone(),
                step: (j + 1) as f64 / m as f64,
                value: StandardNormal.sample(&mut rng),
            });
        }
    }
    Dataset::new(records)
}

/// Final value of one synthetic curve and whether it was hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalValue {
    pub config_id: String,
    pub hyperparams: Vec<f64>,
    pub value: f64,
    pub hidden: bool,
}

/// Power-law learning curves `y(t) = a − b t^{−c} + noise` on steps `1..=m`,
/// with `(a, b, c)` smooth functions of the configuration plus a small
/// seeded perturbation.
///
/// Each curve loses a contiguous suffix. Suffix lengths are spread evenly
/// over `[0, 2·missing_fraction·m]` (capped at `m − 1`) and assigned to
/// configs in seeded random order, so the overall hidden fraction matches
/// `missing_fraction` and some curves stay complete. If no curve would be
/// complete, the shortest suffix is dropped so that the final step remains
/// on the grid.
pub fn synth_curves(
    n: usize,
    m: usize,
    d: usize,
    noise: f64,
    missing_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Vec<FinalValue>)> {
    if n == 0 || m == 0 || d == 0 {
        return Err(LkgpError::Invalid("n, m and d must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&missing_fraction) {
        return Err(LkgpError::Invalid(format!(
            "missing_fraction must be in [0, 1), got {missing_fraction}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(LkgpError::Invalid("noise must be finite and nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wobble = Normal::new(0.0, 0.02).expect("valid normal");

    let mut hidden: Vec<usize> = (0..n)
        .map(|i| {
            let h = (2.0 * missing_fraction * m as f64 * (i as f64 + 0.5) / n as f64).round();
            (h as usize).min(m - 1)
        })
        .collect();
    hidden.shuffle(&mut rng);
    if !hidden.contains(&0) {
        let k = (0..n).min_by_key(|&i| hidden[i]).expect("n >= 1");
        hidden[k] = 0;
    }

    let mut records = Vec::new();
    let mut finals = Vec::with_capacity(n);
    for (i, &h) in hidden.iter().enumerate() {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let u = |k: usize| x[k % d];
        let a = 0.5 + 0.4 * u(0) + wobble.sample(&mut rng);
        let b = 0.2 + 0.5 * u(1) + wobble.sample(&mut rng);
        let c = 0.3 + 1.2 * u(2) + wobble.sample(&mut rng);
        let curve: Vec<f64> = (1..=m)
            .map(|t| {
                let e: f64 = StandardNormal.sample(&mut rng);
                a - b * (t as f64).powf(-c) + noise * e
            })
            .collect();
        for (j, &v) in curve.iter().enumerate().take(m - h) {
            records.push(CurveRecord {
                config_id: config_id(i),
                hyperparams: x.clone(),
                step: (j + 1) as f64,
                value: v,
            });
        }
        finals.push(FinalValue {
            config_id: config_id(i),
            hyperparams: x,
            value: curve[m - 1],
            hidden: h > 0,
        });
    }
    Ok((Dataset::new(records)?, finals))
}
