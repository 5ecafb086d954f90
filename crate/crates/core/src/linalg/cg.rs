use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::operator::LinearOperator;
use crate::error::{LkgpError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    pub rel_tolerance: f64,
    pub max_iters: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            rel_tolerance: 0.01,
            max_iters: 10_000,
        }
    }
}

impl CgConfig {
    pub fn new(rel_tolerance: f64, max_iters: usize) -> Result<Self> {
        let cfg = Self {
            rel_tolerance,
            max_iters,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance.is_finite()) {
            return Err(LkgpError::Invalid(format!(
                "CG relative tolerance must be positive, got {}",
                self.rel_tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(LkgpError::Invalid("CG max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per right-hand-side outcome of a batched CG solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: Vec<usize>,
    pub final_rel_residual: Vec<f64>,
    pub converged: Vec<bool>,
}

impl CgReport {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
}

fn dot<T: Scalar>(a: &DMatrix<T>, ca: usize, b: &DMatrix<T>, cb: usize) -> T {
    a.column(ca).dot(&b.column(cb))
}

fn gather_cols<T: Scalar>(src: &DMatrix<T>, cols: &[usize]) -> DMatrix<T> {
    let mut out = DMatrix::zeros(src.nrows(), cols.len());
    for (k, &c) in cols.iter().enumerate() {
        out.set_column(k, &src.column(c));
    }
    out
}

/// Solves `op X = B` column by column with conjugate gradients.
///
/// All columns share one batched operator application per iteration; each
/// column stops once its residual drops to `rel_tolerance · ‖b‖`. A column
/// is only declared converged after its true residual `b − op x` is
/// recomputed and confirmed; otherwise CG restarts from that residual.
/// Exhausting `max_iters` is reported, not an error.
pub fn cg_solve<T, Op>(op: &Op, b: &DMatrix<T>, cfg: &CgConfig) -> Result<(DMatrix<T>, CgReport)>
where
    T: Scalar,
    Op: LinearOperator<T> + ?Sized,
{
    cfg.validate()?;
    let dim = op.dim();
    if b.nrows() != dim {
        return Err(LkgpError::dims("cg_solve", dim, b.nrows()));
    }
    let nrhs = b.ncols();
    let tol = T::lit(cfg.rel_tolerance);

    let mut x = DMatrix::<T>::zeros(dim, nrhs);
    let mut r = b.clone();
    let mut p = b.clone();
    let bnorm: Vec<T> = (0..nrhs).map(|c| b.column(c).norm()).collect();
    let mut rr: Vec<T> = (0..nrhs).map(|c| dot(&r, c, &r, c)).collect();

    let mut report = CgReport {
        iterations: vec![0; nrhs],
        final_rel_residual: vec![0.0; nrhs],
        converged: vec![false; nrhs],
    };
    let mut active: Vec<usize> = Vec::with_capacity(nrhs);
    for (c, &bn) in bnorm.iter().enumerate() {
        if !bn.is_finite_val() {
            return Err(LkgpError::Breakdown(format!(
                "right-hand side {c} contains non-finite values"
            )));
        }
        if bn == T::zero() {
            report.converged[c] = true;
        } else {
            active.push(c);
        }
    }

    let mut iter = 0;
    while !active.is_empty() && iter < cfg.max_iters {
        iter += 1;
        let ap = op.apply_batch(&gather_cols(&p, &active))?;
        let mut candidates = Vec::new();
        for (k, &c) in active.iter().enumerate() {
            let pap = p.column(c).dot(&ap.column(k));
            if !pap.is_finite_val() {
                return Err(LkgpError::Breakdown(format!(
                    "non-finite curvature in CG column {c} at iteration {iter}"
                )));
            }
            if pap <= T::zero() {
                return Err(LkgpError::Breakdown(format!(
                    "operator is not positive definite (pᵀAp = {pap}) in CG column {c} at iteration {iter}"
                )));
            }
            let alpha = rr[c] / pap;
            x.column_mut(c).axpy(alpha, &p.column(c), T::one());
            r.column_mut(c).axpy(-alpha, &ap.column(k), T::one());
            let rr_new = dot(&r, c, &r, c);
            if !rr_new.is_finite_val() {
                return Err(LkgpError::Breakdown(format!(
                    "NaN residual in CG column {c} at iteration {iter}"
                )));
            }
            report.iterations[c] = iter;
            if rr_new.sqrt() <= tol * bnorm[c] {
                candidates.push(c);
            } else {
                let beta = rr_new / rr[c];
                let rc = r.column(c).clone_owned();
                let mut pc = p.column_mut(c);
                pc *= beta;
                pc += rc;
            }
            rr[c] = rr_new;
        }

        if !candidates.is_empty() {
            let ax = op.apply_batch(&gather_cols(&x, &candidates))?;
            for (k, &c) in candidates.iter().enumerate() {
                let true_r = b.column(c) - ax.column(k);
                let rel = true_r.norm() / bnorm[c];
                if rel <= tol {
                    report.converged[c] = true;
                    report.final_rel_residual[c] = rel.as_f64();
                } else {
                    rr[c] = true_r.norm_squared();
                    r.set_column(c, &true_r);
                    p.set_column(c, &true_r);
                }
            }
            active.retain(|&c| !report.converged[c]);
        }
    }

    if !active.is_empty() {
        let ax = op.apply_batch(&gather_cols(&x, &active))?;
        for (k, &c) in active.iter().enumerate() {
            let rel = (b.column(c) - ax.column(k)).norm() / bnorm[c];
            report.final_rel_residual[c] = rel.as_f64();
            log::debug!(
                "CG column {c} did not converge in {} iterations (rel residual {:e})",
                cfg.max_iters,
                rel.as_f64()
            );
        }
    }
    Ok((x, report))
}
