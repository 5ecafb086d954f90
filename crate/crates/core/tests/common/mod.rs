//! Independent dense reference implementations used by the integration
//! tests. Nothing here calls into the structured code paths.

#![allow(dead_code)]

use lkgp::linalg::ProjectionMask;
use lkgp::{Params64, TrainingData64};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rbf(x: &[f64], x2: &[f64], log_ls: &[f64]) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(log_ls)
        .map(|((a, b), l)| ((a - b) / l.exp()).powi(2))
        .sum();
    (-0.5 * r2).exp()
}

pub fn matern52(t: f64, t2: f64, log_ls: f64, log_os: f64) -> f64 {
    let r = (t - t2).abs() / log_ls.exp();
    let s = 5f64.sqrt() * r;
    log_os.exp() * (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
}

/// Product kernel between cells `(x, t)` and `(x2, t2)`.
pub fn product(params: &Params64, x: &[f64], t: f64, x2: &[f64], t2: f64) -> f64 {
    rbf(x, x2, &params.rbf_log_lengthscales)
        * matern52(t, t2, params.matern_log_lengthscale, params.matern_log_outputscale)
}

/// A product-space point `(config row, step)`.
pub type Cell = (Vec<f64>, f64);

pub fn observed_cells(data: &TrainingData64) -> Vec<Cell> {
    let mut out = Vec::new();
    for i in 0..data.n() {
        for j in 0..data.m() {
            if data.mask().is_observed(i, j) {
                out.push((data.x().row(i).iter().copied().collect(), data.t()[j]));
            }
        }
    }
    out
}

pub fn grid_cells(x: &DMatrix<f64>, t: &[f64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for i in 0..x.nrows() {
        for &tj in t {
            out.push((x.row(i).iter().copied().collect(), tj));
        }
    }
    out
}

pub fn cov(params: &Params64, a: &[Cell], b: &[Cell]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |r, c| {
        product(params, &a[r].0, a[r].1, &b[c].0, b[c].1)
    })
}

/// Relative jitter on the diagonal: 1e-6 times the mean prior variance of
/// the observed cells.
pub fn jitter(params: &Params64, cells: &[Cell]) -> f64 {
    let mean = cells.iter().map(|c| product(params, &c.0, c.1, &c.0, c.1)).sum::<f64>() / cells.len() as f64;
    1e-6 * mean
}

/// Noisy training covariance of a dense GP on the observed cells.
pub fn train_cov(params: &Params64, data: &TrainingData64) -> DMatrix<f64> {
    let cells = observed_cells(data);
    let shift = params.log_noise.exp() + jitter(params, &cells);
    cov(params, &cells, &cells) + DMatrix::identity(cells.len(), cells.len()) * shift
}

pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Latent posterior on `test` cells of a dense GP.
pub fn dense_posterior(params: &Params64, data: &TrainingData64, test: &[Cell]) -> DensePosterior {
    let train = observed_cells(data);
    let k = train_cov(params, data);
    let chol = k.cholesky().expect("SPD training covariance");
    let ks = cov(params, test, &train);
    let kss = cov(params, test, test);
    let y = data.observed();
    let mean = &ks * chol.solve(&y);
    let cov = kss - &ks * chol.solve(&ks.transpose());
    DensePosterior { mean, cov }
}

/// Negative log marginal likelihood of a dense GP (no prior term).
pub fn dense_nll(params: &Params64, data: &TrainingData64) -> f64 {
    let k = train_cov(params, data);
    let p = k.nrows() as f64;
    let chol = k.cholesky().expect("SPD training covariance");
    let y = data.observed();
    let alpha = chol.solve(&y);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    0.5 * y.dot(&alpha) + 0.5 * logdet + 0.5 * p * (2.0 * std::f64::consts::PI).ln()
}

pub fn normal_logpdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Log prior over the log-parameters.
pub fn dense_log_prior(params: &Params64) -> f64 {
    let d = params.rbf_log_lengthscales.len() as f64;
    let ls_mean = 2f64.sqrt() + 0.5 * d.ln();
    params
        .rbf_log_lengthscales
        .iter()
        .map(|&l| normal_logpdf(l, ls_mean, 3f64.sqrt()))
        .sum::<f64>()
        + normal_logpdf(params.log_noise, -4.0, 1.0)
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize) -> Params64 {
    Params64 {
        rbf_log_lengthscales: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        matern_log_lengthscale: rng.random_range(-1.5..0.5),
        matern_log_outputscale: rng.random_range(-0.5..0.5),
        log_noise: rng.random_range(-4.0..-1.0),
    }
}

/// Random mask with every config observed at least once.
pub fn random_mask(rng: &mut ChaCha8Rng, n: usize, m: usize, keep: f64) -> ProjectionMask {
    let mut obs: Vec<bool> = (0..n * m).map(|_| rng.random::<f64>() < keep).collect();
    for i in 0..n {
        if !obs[i * m..(i + 1) * m].iter().any(|&b| b) {
            obs[i * m + rng.random_range(0..m)] = true;
        }
    }
    ProjectionMask::new(n, m, obs).unwrap()
}

/// Random problem with inputs in `[0, 1]^d`, sorted distinct steps in
/// `[0, 1]` and standard normal observations on the masked cells.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize, keep: f64) -> TrainingData64 {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
    let t: Vec<f64> = (0..m)
        .map(|j| (j as f64 + rng.random_range(0.1..0.9)) / m as f64)
        .collect();
    let mask = random_mask(rng, n, m, keep);
    let y = DMatrix::from_fn(n, m, |i, j| {
        if mask.is_observed(i, j) {
            StandardNormal.sample(rng)
        } else {
            0.0
        }
    });
    TrainingData64::new(x, t, y, mask).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
