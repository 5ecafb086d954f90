//! Time and memory scaling harness on the synthetic benchmark recipe.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc_track;
use crate::data_io::{synth_benchmark, to_training_data};
use crate::error::{LkgpError, Result};
use crate::model::{Backend, BackendChoice, FitConfig, LkgpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub size: usize,
    pub backend: Backend,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub peak_tracked_bytes: usize,
    /// `ok`, `refused: ...` or `failed: ...`.
    pub status: String,
}

impl BenchResult {
    pub fn is_ok(&self) -> bool {
        self.status.starts_with("ok")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub d: usize,
    pub backends: Vec<Backend>,
    pub test_configs: usize,
    /// Posterior draws per test configuration in the sampling phase.
    pub samples: usize,
    pub seed: u64,
    pub fit: FitConfig,
    /// Per-cell wall-clock budget; the number of test configurations is
    /// reduced when the sampling phase is projected to exceed it.
    pub max_seconds: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 64, 128, 256],
            d: 10,
            backends: vec![Backend::Exact, Backend::Iterative],
            test_configs: 512,
            samples: 1,
            seed: 0,
            fit: FitConfig::default(),
            max_seconds: None,
        }
    }
}

fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Exact => "exact",
        Backend::Iterative => "iterative",
    }
}

pub const BENCH_HEADER: [&str; 6] = [
    "size",
    "backend",
    "fit_seconds",
    "predict_seconds",
    "peak_tracked_bytes",
    "status",
];

pub fn write_bench_csv<W: Write>(rows: &[BenchResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record([
            r.size.to_string(),
            backend_name(r.backend).to_string(),
            format!("{:.6}", r.fit_seconds),
            format!("{:.6}", r.predict_seconds),
            r.peak_tracked_bytes.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one (size, backend) cell. Errors inside the cell become a status.
pub fn bench_cell(size: usize, backend: Backend, cfg: &BenchConfig) -> BenchResult {
    let mut row = BenchResult {
        size,
        backend,
        fit_seconds: 0.0,
        predict_seconds: 0.0,
        peak_tracked_bytes: 0,
        status: "ok".into(),
    };
    let p = size * size;
    if backend == Backend::Exact && p > cfg.fit.dense_cap {
        row.status = format!("refused: p={p} exceeds dense cap {}", cfg.fit.dense_cap);
        return row;
    }
    if let Err(e) = run_cell(size, backend, cfg, &mut row) {
        row.status = format!("failed: {e}");
    }
    row
}

fn run_cell(size: usize, backend: Backend, cfg: &BenchConfig, row: &mut BenchResult) -> Result<()> {
    let seed = cfg.seed.wrapping_add(size as u64);
    let ds = synth_benchmark(size, size, cfg.d, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe7c_4a11);
    let mut fit_cfg = cfg.fit;
    fit_cfg.backend = match backend {
        Backend::Exact => BackendChoice::Exact,
        Backend::Iterative => BackendChoice::Iterative,
    };
    fit_cfg.seed = seed;

    let start = Instant::now();
    let (fitted, fit_peak) = alloc_track::measure(|| {
        let prepared = to_training_data::<f64>(&ds)?;
        LkgpModel::fit(prepared, &fit_cfg)
    });
    let model = fitted?;
    row.fit_seconds = start.elapsed().as_secs_f64();

    let steps = model.steps.clone();
    let mut count = cfg.test_configs.max(1);
    let draw = |count: usize, rng: &mut ChaCha8Rng| DMatrix::from_fn(count, cfg.d, |_, _| rng.random::<f64>());
    if let Some(budget) = cfg.max_seconds {
        let probe = count.min(8);
        let t0 = Instant::now();
        model.matheron_sample(&draw(probe, &mut rng.clone()), &steps, cfg.samples, seed)?;
        let per_config = t0.elapsed().as_secs_f64() / probe as f64;
        let remaining = (budget - row.fit_seconds).max(0.0);
        if per_config * count as f64 > remaining {
            let scaled = ((remaining / per_config.max(1e-9)) as usize).clamp(1, count);
            log::warn!("size {size}: scaling test configurations from {count} to {scaled}");
            count = scaled;
        }
    }
    let test_x = draw(count, &mut rng);
    let start = Instant::now();
    let (sampled, predict_peak) = alloc_track::measure(|| model.matheron_sample(&test_x, &steps, cfg.samples, seed));
    sampled?;
    row.predict_seconds = start.elapsed().as_secs_f64();
    row.peak_tracked_bytes = fit_peak.max(predict_peak);
    if count != cfg.test_configs {
        row.status = format!("ok: test configs scaled to {count}");
    }
    Ok(())
}

/// Runs every requested cell in order. Sizes must be ascending.
pub fn run_bench(cfg: &BenchConfig, mut on_row: impl FnMut(&BenchResult)) -> Result<Vec<BenchResult>> {
    if cfg.sizes.is_empty() || cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LkgpError::Invalid(
            "bench sizes must be non-empty and strictly ascending".into(),
        ));
    }
    if cfg.sizes[0] < 2 {
        return Err(LkgpError::Invalid("bench sizes must be at least 2".into()));
    }
    let mut rows = Vec::new();
    for &size in &cfg.sizes {
        for &backend in &cfg.backends {
            let row = bench_cell(size, backend, cfg);
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
