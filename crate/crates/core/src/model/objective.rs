use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::data::TrainingData;
use crate::error::{LkgpError, Result};
use crate::kernels::{gram_grads, log_prior, matern52_gram, rbf_gram, GramDerivative, ProductKernelParams};
use crate::linalg::{
    cg_solve, cholesky_blocked, dense_materialize, slq_logdet, spd_inverse, trace_from_solves, CgConfig, CgReport,
    KroneckerOperator, LinearOperator, ProbeSet, ProjectedKroneckerOperator, ScaledIdentity, DEFAULT_DENSE_CAP,
    DEFAULT_JITTER_REL, DEFAULT_LANCZOS_STEPS, DEFAULT_PROBES,
};
use crate::scalar::Scalar;

/// Largest observed count for which [`BackendChoice::Auto`] picks the exact
/// backend.
pub const AUTO_EXACT_MAX: usize = 4096;

/// How linear systems with the joint covariance are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Dense Cholesky of the materialized p × p covariance.
    Exact,
    /// CG, stochastic Lanczos quadrature and Hutchinson traces on the lazy
    /// projected Kronecker operator.
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Auto,
    Exact,
    Iterative,
}

impl BackendChoice {
    pub fn resolve(self, p: usize) -> Backend {
        match self {
            BackendChoice::Exact => Backend::Exact,
            BackendChoice::Iterative => Backend::Iterative,
            BackendChoice::Auto if p <= AUTO_EXACT_MAX => Backend::Exact,
            BackendChoice::Auto => Backend::Iterative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub backend: Backend,
    pub cg: CgConfig,
    pub probes: usize,
    pub probe_seed: u64,
    pub lanczos_steps: usize,
    pub dense_cap: usize,
}

impl ObjectiveConfig {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            cg: CgConfig::default(),
            probes: DEFAULT_PROBES,
            probe_seed: 0,
            lanczos_steps: DEFAULT_LANCZOS_STEPS,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue<T: Scalar> {
    pub value: T,
    pub grad: Vec<T>,
    /// CG outcome of the iterative backend (first column is the data solve).
    pub cg: Option<CgReport>,
}

/// Factor Grams and the projected joint covariance for given parameters.
pub(crate) fn joint_operator<T: Scalar>(
    params: &ProductKernelParams<T>,
    data: &TrainingData<T>,
) -> Result<ProjectedKroneckerOperator<T>> {
    if params.dim() != data.d() {
        return Err(LkgpError::dims("kernel parameters", data.d(), params.dim()));
    }
    let k1 = rbf_gram(data.x(), data.x(), &params.rbf_log_lengthscales)?;
    let k2 = matern52_gram(
        data.t(),
        data.t(),
        params.matern_log_lengthscale,
        params.matern_log_outputscale,
    );
    ProjectedKroneckerOperator::new(KroneckerOperator::new(k1, k2)?, data.mask().clone(), params.noise())
}

/// Dense Cholesky of `k`, adding diagonal jitter in tenfold steps on
/// failure.
pub(crate) fn robust_cholesky<T: Scalar>(k: DMatrix<T>, base_jitter: T) -> Result<Cholesky<T, Dyn>> {
    let mut extra = T::zero();
    let step = base_jitter.max(T::lit(1e-10));
    for attempt in 0..6 {
        let mut kk = k.clone();
        if attempt > 0 {
            extra = step * T::lit(10f64.powi(attempt));
            for i in 0..kk.nrows() {
                kk[(i, i)] += extra;
            }
            log::warn!("Cholesky failed; retrying with extra jitter {:e}", extra.as_f64());
        }
        if let Some(c) = cholesky_blocked(kk) {
            return Ok(c);
        }
    }
    Err(LkgpError::Cholesky { jitter: extra.as_f64() })
}

/// `∂ jitter / ∂θ` for a kernel-parameter derivative; the default jitter is
/// proportional to the mean observed diagonal of `K₁ ⊗ K₂`.
fn jitter_derivative<T: Scalar>(deriv: &GramDerivative<T>, op: &ProjectedKroneckerOperator<T>) -> T {
    let (k1, k2) = (op.kron().left(), op.kron().right());
    let mask = op.mask();
    let sum = match deriv {
        GramDerivative::Left(d1) => mask.cells().fold(T::zero(), |a, (i, j)| a + d1[(i, i)] * k2[(j, j)]),
        GramDerivative::Right(d2) => mask.cells().fold(T::zero(), |a, (i, j)| a + k1[(i, i)] * d2[(j, j)]),
        GramDerivative::Noise => return T::zero(),
    };
    T::lit(DEFAULT_JITTER_REL) * sum / T::lit(mask.count() as f64)
}

/// Negative log marginal likelihood minus log prior, with gradient over the
/// `d + 3` log-parameters.
pub fn neg_map_objective<T: Scalar>(
    params: &ProductKernelParams<T>,
    data: &TrainingData<T>,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveValue<T>> {
    let op = joint_operator(params, data)?;
    let y = data.observed();
    let derivs = gram_grads(data.x(), data.t(), params)?;
    let (nll, mut grad, cg) = match cfg.backend {
        Backend::Exact => exact_nll(&op, &y, &derivs, params, cfg.dense_cap)?,
        Backend::Iterative => iterative_nll(&op, &y, &derivs, params, cfg)?,
    };
    let (lp, lp_grad) = log_prior(params, params.dim())?;
    for (g, lg) in grad.iter_mut().zip(&lp_grad) {
        *g -= *lg;
    }
    Ok(ObjectiveValue {
        value: nll - lp,
        grad,
        cg,
    })
}

fn half_log_2pi<T: Scalar>(p: usize) -> T {
    T::lit(0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln())
}

type NllParts<T> = (T, Vec<T>, Option<CgReport>);

fn exact_nll<T: Scalar>(
    op: &ProjectedKroneckerOperator<T>,
    y: &DVector<T>,
    derivs: &[GramDerivative<T>],
    params: &ProductKernelParams<T>,
    cap: usize,
) -> Result<NllParts<T>> {
    let p = op.dim();
    let k = dense_materialize(op, cap)?;
    let chol = robust_cholesky(k, op.jitter())?;
    let alpha = chol.solve(y);
    let logdet = chol.l_dirty().diagonal().iter().fold(T::zero(), |a, &v| a + v.ln()) * T::lit(2.0);
    let half = T::lit(0.5);
    let nll = half * y.dot(&alpha) + half * logdet + half_log_2pi::<T>(p);

    // ∂nll/∂θ = ½ tr((K⁻¹ − ααᵀ) ∂K)
    let mut w = spd_inverse(&chol);
    w.ger(-T::one(), &alpha, &alpha, T::one());
    let cells: Vec<(usize, usize)> = op.mask().cells().collect();
    let (k1, k2) = (op.kron().left(), op.kron().right());
    let trace_w = w.trace();
    let grad = derivs
        .iter()
        .map(|deriv| {
            let structured = match deriv {
                GramDerivative::Left(d1) => weighted_sum(&w, &cells, |(ia, ja), (ib, jb)| d1[(ia, ib)] * k2[(ja, jb)]),
                GramDerivative::Right(d2) => weighted_sum(&w, &cells, |(ia, ja), (ib, jb)| k1[(ia, ib)] * d2[(ja, jb)]),
                GramDerivative::Noise => params.noise() * trace_w,
            };
            half * (structured + jitter_derivative(deriv, op) * trace_w)
        })
        .collect();
    Ok((nll, grad, None))
}

fn weighted_sum<T: Scalar>(
    w: &DMatrix<T>,
    cells: &[(usize, usize)],
    entry: impl Fn((usize, usize), (usize, usize)) -> T,
) -> T {
    let mut total = T::zero();
    for (b, &cb) in cells.iter().enumerate() {
        let col = w.column(b);
        for (a, &ca) in cells.iter().enumerate() {
            total += col[a] * entry(ca, cb);
        }
    }
    total
}

fn derivative_operator<T: Scalar>(
    deriv: &GramDerivative<T>,
    op: &ProjectedKroneckerOperator<T>,
    params: &ProductKernelParams<T>,
) -> Result<Box<dyn LinearOperator<T>>> {
    let jitter = jitter_derivative(deriv, op);
    let mask = op.mask().clone();
    Ok(match deriv {
        GramDerivative::Left(d1) => Box::new(ProjectedKroneckerOperator::with_jitter(
            KroneckerOperator::new(d1.clone(), op.kron().right().clone())?,
            mask,
            T::zero(),
            jitter,
        )?),
        GramDerivative::Right(d2) => Box::new(ProjectedKroneckerOperator::with_jitter(
            KroneckerOperator::new(op.kron().left().clone(), d2.clone())?,
            mask,
            T::zero(),
            jitter,
        )?),
        GramDerivative::Noise => Box::new(ScaledIdentity {
            dim: op.dim(),
            scale: params.noise(),
        }),
    })
}

fn iterative_nll<T: Scalar>(
    op: &ProjectedKroneckerOperator<T>,
    y: &DVector<T>,
    derivs: &[GramDerivative<T>],
    params: &ProductKernelParams<T>,
    cfg: &ObjectiveConfig,
) -> Result<NllParts<T>> {
    let p = op.dim();
    let probes = ProbeSet::<T>::rademacher(p, cfg.probes, cfg.probe_seed)?;
    let z = probes.as_matrix();
    let mut rhs = DMatrix::zeros(p, z.ncols() + 1);
    rhs.set_column(0, y);
    rhs.columns_mut(1, z.ncols()).copy_from(z);
    let (sol, report) = cg_solve(op, &rhs, &cfg.cg)?;
    if !report.all_converged() {
        log::debug!(
            "CG did not converge for {} of {} right-hand sides",
            report.converged.iter().filter(|c| !**c).count(),
            report.converged.len()
        );
    }
    let alpha = sol.column(0).clone_owned();
    let solves = sol.columns(1, z.ncols()).clone_owned();

    let logdet = slq_logdet(op, &probes, cfg.lanczos_steps)?;
    let half = T::lit(0.5);
    let nll = half * y.dot(&alpha) + half * logdet + half_log_2pi::<T>(p);

    let mut apply_to = DMatrix::zeros(p, z.ncols() + 1);
    apply_to.set_column(0, &alpha);
    apply_to.columns_mut(1, z.ncols()).copy_from(z);
    let mut grad = Vec::with_capacity(derivs.len());
    for deriv in derivs {
        let dop = derivative_operator(deriv, op, params)?;
        let applied = dop.apply_batch(&apply_to)?;
        let quad = alpha.dot(&applied.column(0));
        let trace = trace_from_solves(&solves, &applied.columns(1, z.ncols()).clone_owned());
        grad.push(half * (trace - quad));
    }
    Ok((nll, grad, Some(report)))
}
