//! Randomized log-determinant and trace estimators.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cg::{cg_solve, CgConfig, CgReport};
use super::operator::LinearOperator;
use crate::error::{LkgpError, Result};
use crate::scalar::Scalar;

/// Default number of Lanczos steps per probe.
pub const DEFAULT_LANCZOS_STEPS: usize = 30;

/// Default number of probe vectors.
pub const DEFAULT_PROBES: usize = 16;

/// Rademacher probe vectors, stored as the columns of a `dim × count`
/// matrix and regenerated exactly from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet<T: Scalar> {
    seed: u64,
    probes: DMatrix<T>,
}

impl<T: Scalar> ProbeSet<T> {
    pub fn rademacher(dim: usize, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(LkgpError::Invalid("probe count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes = DMatrix::from_fn(
            dim,
            count,
            |_, _| {
                if rng.random::<bool>() {
                    T::one()
                } else {
                    -T::one()
                }
            },
        );
        Ok(Self { seed, probes })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.probes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.probes.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.probes
    }
}

/// Stochastic Lanczos quadrature estimate of `log det(op)`.
///
/// Runs `lanczos_steps` steps of the Lanczos recurrence from every probe at
/// once, then applies Gauss quadrature on each tridiagonal matrix. A probe
/// whose Krylov space becomes invariant stops early; its quadrature is then
/// exact.
pub fn slq_logdet<T, Op>(op: &Op, probes: &ProbeSet<T>, lanczos_steps: usize) -> Result<T>
where
    T: Scalar,
    Op: LinearOperator<T> + ?Sized,
{
    if lanczos_steps < 2 {
        return Err(LkgpError::Invalid(format!(
            "SLQ needs at least 2 Lanczos steps, got {lanczos_steps}"
        )));
    }
    let dim = op.dim();
    if probes.dim() != dim {
        return Err(LkgpError::dims("slq_logdet probes", dim, probes.dim()));
    }
    let nprobe = probes.count();
    let steps = lanczos_steps.min(dim);
    let z = probes.as_matrix();
    let znorm: Vec<T> = z.column_iter().map(|c| c.norm()).collect();

    let mut q = z.clone();
    for (c, &nrm) in znorm.iter().enumerate() {
        q.column_mut(c).unscale_mut(nrm);
    }
    let mut q_prev = DMatrix::<T>::zeros(dim, nprobe);
    let mut alphas: Vec<Vec<T>> = vec![Vec::with_capacity(steps); nprobe];
    let mut betas: Vec<Vec<T>> = vec![Vec::with_capacity(steps); nprobe];
    let mut active: Vec<usize> = (0..nprobe).collect();
    let breakdown_tol = T::tol(1e-12);

    for step in 0..steps {
        if active.is_empty() {
            break;
        }
        let mut qa = DMatrix::zeros(dim, active.len());
        for (k, &c) in active.iter().enumerate() {
            qa.set_column(k, &q.column(c));
        }
        let w_all = op.apply_batch(&qa)?;
        let mut still = Vec::with_capacity(active.len());
        for (k, &c) in active.iter().enumerate() {
            let mut w = w_all.column(k).clone_owned();
            let alpha = q.column(c).dot(&w);
            if !alpha.is_finite_val() {
                return Err(LkgpError::LanczosBreakdown {
                    step: step + 1,
                    reason: format!("non-finite diagonal coefficient for probe {c}"),
                });
            }
            w.axpy(-alpha, &q.column(c), T::one());
            if let Some(&beta_prev) = betas[c].last() {
                w.axpy(-beta_prev, &q_prev.column(c), T::one());
            }
            let beta = w.norm();
            if !beta.is_finite_val() {
                return Err(LkgpError::LanczosBreakdown {
                    step: step + 1,
                    reason: format!("non-finite off-diagonal coefficient for probe {c}"),
                });
            }
            alphas[c].push(alpha);
            let scale = alpha.abs() + betas[c].last().copied().unwrap_or(T::zero());
            if step + 1 < steps && beta > breakdown_tol * scale {
                betas[c].push(beta);
                q_prev.set_column(c, &q.column(c));
                q.set_column(c, &(w / beta));
                still.push(c);
            }
        }
        active = still;
    }

    let mut total = T::zero();
    for c in 0..nprobe {
        let k = alphas[c].len();
        let mut tri = DMatrix::<T>::zeros(k, k);
        for i in 0..k {
            tri[(i, i)] = alphas[c][i];
            if i + 1 < k {
                tri[(i, i + 1)] = betas[c][i];
                tri[(i + 1, i)] = betas[c][i];
            }
        }
        let eig = SymmetricEigen::try_new(tri, T::lit(T::EPS), 0).ok_or_else(|| LkgpError::LanczosBreakdown {
            step: k,
            reason: "tridiagonal eigendecomposition did not converge".into(),
        })?;
        let mut quad = T::zero();
        for i in 0..k {
            let theta = eig.eigenvalues[i];
            if theta <= T::zero() {
                return Err(LkgpError::LanczosBreakdown {
                    step: k,
                    reason: format!("non-positive Ritz value {theta} for probe {c}"),
                });
            }
            let tau = eig.eigenvectors[(0, i)];
            quad += tau * tau * theta.ln();
        }
        total += quad * znorm[c] * znorm[c];
    }
    Ok(total / T::lit(nprobe as f64))
}

/// Hutchinson estimate of `tr(op⁻¹ d_op)` as the probe average of
/// `zᵀ op⁻¹ (d_op z)`, with the solves done by CG. The CG report is
/// returned so callers can act on non-convergence.
pub fn hutchinson_trace_grad<T, Op, DOp>(
    op: &Op,
    d_op: &DOp,
    probes: &ProbeSet<T>,
    cfg: &CgConfig,
) -> Result<(T, CgReport)>
where
    T: Scalar,
    Op: LinearOperator<T> + ?Sized,
    DOp: LinearOperator<T> + ?Sized,
{
    if d_op.dim() != op.dim() {
        return Err(LkgpError::dims("hutchinson derivative operator", op.dim(), d_op.dim()));
    }
    let (solves, report) = cg_solve(op, probes.as_matrix(), cfg)?;
    let dz = d_op.apply_batch(probes.as_matrix())?;
    Ok((trace_from_solves(&solves, &dz), report))
}

/// Probe average of `solvesᵢ · dzᵢ`, where `solvesᵢ = op⁻¹ zᵢ` and
/// `dzᵢ = d_op zᵢ`.
pub fn trace_from_solves<T: Scalar>(solves: &DMatrix<T>, dz: &DMatrix<T>) -> T {
    let n = solves.ncols();
    let sum = (0..n).fold(T::zero(), |acc, c| acc + solves.column(c).dot(&dz.column(c)));
    sum / T::lit(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::operator::{KroneckerOperator, ProjectedKroneckerOperator, ProjectionMask, ScaledIdentity};
    use nalgebra::DVector;
    use rand::Rng;

    fn random_spd(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.2
    }

    #[test]
    fn probes_are_rademacher_and_reproducible() {
        let a = ProbeSet::<f64>::rademacher(50, 4, 3).unwrap();
        let b = ProbeSet::<f64>::rademacher(50, 4, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.as_matrix().iter().all(|&v| v == 1.0 || v == -1.0));
        let c = ProbeSet::<f64>::rademacher(50, 4, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn logdet_identity_is_zero() {
        let op = ProjectedKroneckerOperator::with_jitter(
            KroneckerOperator::new(DMatrix::<f64>::identity(2, 2), DMatrix::identity(5, 5)).unwrap(),
            ProjectionMask::full(2, 5),
            0.0,
            0.0,
        )
        .unwrap();
        let probes = ProbeSet::rademacher(10, 8, 1).unwrap();
        let ld = slq_logdet(&op, &probes, DEFAULT_LANCZOS_STEPS).unwrap();
        assert!(ld.abs() < 1e-10, "{ld}");
    }

    #[test]
    fn logdet_scaled_identity() {
        let op = ScaledIdentity { dim: 7, scale: 2.5f64 };
        let probes = ProbeSet::rademacher(7, 3, 9).unwrap();
        let ld = slq_logdet(&op, &probes, 10).unwrap();
        assert!((ld - 7.0 * 2.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logdet_close_to_cholesky_on_random_spd() {
        let spd = random_spd(48, 11);
        let exact = 2.0 * spd.clone().cholesky().unwrap().l().diagonal().map(f64::ln).sum();
        let probes = ProbeSet::rademacher(48, 32, 5).unwrap();
        let est = slq_logdet(&spd, &probes, 30).unwrap();
        assert!(((est - exact) / exact).abs() < 0.05, "est {est} exact {exact}");
        assert_eq!(est, slq_logdet(&spd, &probes, 30).unwrap());
    }

    #[test]
    fn logdet_needs_two_steps() {
        let op = ScaledIdentity { dim: 3, scale: 1.0f64 };
        let probes = ProbeSet::rademacher(3, 1, 0).unwrap();
        assert!(slq_logdet(&op, &probes, 1).is_err());
    }

    #[test]
    fn logdet_reports_nan_step() {
        let op = ScaledIdentity {
            dim: 3,
            scale: f64::NAN,
        };
        let probes = ProbeSet::rademacher(3, 1, 0).unwrap();
        assert!(matches!(
            slq_logdet(&op, &probes, 5),
            Err(LkgpError::LanczosBreakdown { step: 1, .. })
        ));
    }

    #[test]
    fn hutchinson_identity_gives_dimension() {
        let id = ScaledIdentity { dim: 13, scale: 1.0f64 };
        let probes = ProbeSet::rademacher(13, 5, 2).unwrap();
        let (tr, rep) = hutchinson_trace_grad(&id, &id, &probes, &CgConfig::default()).unwrap();
        assert_eq!(tr, 13.0);
        assert!(rep.all_converged());
    }

    #[test]
    fn hutchinson_diagonal_is_exact_with_rademacher() {
        let id = ScaledIdentity { dim: 4, scale: 1.0f64 };
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, -1.0, 3.5]));
        let probes = ProbeSet::rademacher(4, 3, 8).unwrap();
        let (tr, _) = hutchinson_trace_grad(&id, &d, &probes, &CgConfig::default()).unwrap();
        assert!((tr - 5.0).abs() < 1e-14);
    }

    #[test]
    fn hutchinson_close_to_dense_trace() {
        let op = random_spd(30, 21);
        let dop = random_spd(30, 22);
        let exact = op.clone().cholesky().unwrap().solve(&dop).trace();
        let probes = ProbeSet::rademacher(30, 64, 1).unwrap();
        let cfg = CgConfig::new(1e-10, 500).unwrap();
        let (est, rep) = hutchinson_trace_grad(&op, &dop, &probes, &cfg).unwrap();
        assert!(rep.all_converged());
        assert!(((est - exact) / exact).abs() < 0.1, "est {est} exact {exact}");
    }
}
