use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::TrainingData;
use super::objective::{neg_map_objective, Backend, BackendChoice, ObjectiveConfig};
use crate::error::{LkgpError, Result};
use crate::kernels::ProductKernelParams;
use crate::linalg::{CgConfig, DEFAULT_DENSE_CAP, DEFAULT_LANCZOS_STEPS, DEFAULT_PROBES};
use crate::optim::{minimize, LbfgsConfig, LbfgsStatus};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub backend: BackendChoice,
    pub cg: CgConfig,
    pub probes: usize,
    pub lanczos_steps: usize,
    pub max_lbfgs_iters: usize,
    pub seed: u64,
    /// Extra optimizer starts from perturbed initializations; the best final
    /// objective wins.
    pub restarts: usize,
    pub dense_cap: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            backend: BackendChoice::Auto,
            cg: CgConfig::default(),
            probes: DEFAULT_PROBES,
            lanczos_steps: DEFAULT_LANCZOS_STEPS,
            max_lbfgs_iters: 100,
            seed: 0,
            restarts: 0,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub backend: Backend,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Objective after every accepted optimizer step of the winning start.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
    pub warning: Option<String>,
    pub cg_rel_tolerance: f64,
    pub cg_max_iters: usize,
    pub probes: usize,
    pub lanczos_steps: usize,
    /// Largest CG iteration count seen in any objective evaluation.
    pub cg_max_iterations_used: usize,
    /// Objective evaluations in which some CG column failed to converge.
    pub cg_nonconverged_evals: usize,
    pub restarts: usize,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// MAP estimate of the kernel parameters by L-BFGS from the default
/// initialization (plus optional restarts).
pub fn fit_params<T: Scalar>(data: &TrainingData<T>, cfg: &FitConfig) -> Result<(ProductKernelParams<T>, FitReport)> {
    cfg.cg.validate()?;
    let d = data.d();
    let backend = cfg.backend.resolve(data.p());
    let obj_cfg = ObjectiveConfig {
        backend,
        cg: cfg.cg,
        probes: cfg.probes,
        probe_seed: cfg.seed,
        lanczos_steps: cfg.lanczos_steps,
        dense_cap: cfg.dense_cap,
    };
    let lbfgs = LbfgsConfig {
        max_iters: cfg.max_lbfgs_iters,
        ..Default::default()
    };

    let mut cg_max = 0usize;
    let mut cg_bad = 0usize;
    let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let xt: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
        let params = ProductKernelParams::from_slice(d, &xt)?;
        let out = neg_map_objective(&params, data, &obj_cfg)?;
        if let Some(rep) = &out.cg {
            cg_max = cg_max.max(rep.max_iterations());
            if !rep.all_converged() {
                cg_bad += 1;
            }
        }
        Ok((out.value.as_f64(), to_f64(&out.grad)))
    };

    let init = to_f64(&ProductKernelParams::<T>::initial(d).to_vec());
    let mut best = minimize(&mut objective, init.clone(), &lbfgs)?;
    let initial_objective = best.trace[0];
    let mut evaluations = best.evaluations;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let jitter = Normal::new(0.0, 0.5).expect("valid normal");
    for r in 0..cfg.restarts {
        let start: Vec<f64> = init.iter().map(|v| v + jitter.sample(&mut rng)).collect();
        match minimize(&mut objective, start, &lbfgs) {
            Ok(out) => {
                evaluations += out.evaluations;
                if out.value < best.value {
                    best = out;
                }
            }
            Err(e) => log::warn!("restart {r} failed at its start point: {e}"),
        }
    }

    let warning = (best.status == LbfgsStatus::LineSearchFailed && best.iterations == 0)
        .then(|| "all line searches failed at the initialization; returning initial parameters".to_string());
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let xt: Vec<T> = best.x.iter().map(|&v| T::lit(v)).collect();
    let params = ProductKernelParams::from_slice(d, &xt)
        .map_err(|e| LkgpError::Breakdown(format!("optimizer produced invalid parameters: {e}")))?;
    let report = FitReport {
        backend,
        initial_objective,
        final_objective: best.value,
        objective_trace: best.trace,
        iterations: best.iterations,
        evaluations,
        status: best.status,
        warning,
        cg_rel_tolerance: cfg.cg.rel_tolerance,
        cg_max_iters: cfg.cg.max_iters,
        probes: cfg.probes,
        lanczos_steps: cfg.lanczos_steps,
        cg_max_iterations_used: cg_max,
        cg_nonconverged_evals: cg_bad,
        restarts: cfg.restarts,
    };
    Ok((params, report))
}
