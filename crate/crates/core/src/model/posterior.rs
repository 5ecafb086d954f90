use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::TrainingData;
use super::objective::{joint_operator, robust_cholesky, Backend};
use crate::error::{LkgpError, Result};
use crate::kernels::{matern52_gram, rbf_gram, ProductKernelParams};
use crate::linalg::{
    cg_solve, dense_materialize, kron_apply, CgConfig, CgReport, KroneckerRoot, LinearOperator,
    ProjectedKroneckerOperator,
};
use crate::scalar::Scalar;

enum Solver<T: Scalar> {
    Dense(Cholesky<T, Dyn>),
    Iterative(CgConfig),
}

/// GP posterior in transformed coordinates for fixed parameters.
///
/// Holds `K_joint⁻¹ y` so that means need only a cross-covariance product.
pub struct Posterior<'a, T: Scalar> {
    params: &'a ProductKernelParams<T>,
    data: &'a TrainingData<T>,
    op: ProjectedKroneckerOperator<T>,
    solver: Solver<T>,
    alpha: DVector<T>,
    report: Option<CgReport>,
}

impl<'a, T: Scalar> Posterior<'a, T> {
    pub fn new(
        params: &'a ProductKernelParams<T>,
        data: &'a TrainingData<T>,
        backend: Backend,
        cg: CgConfig,
        dense_cap: usize,
    ) -> Result<Self> {
        let op = joint_operator(params, data)?;
        let solver = match backend {
            Backend::Exact => Solver::Dense(robust_cholesky(dense_materialize(&op, dense_cap)?, op.jitter())?),
            Backend::Iterative => Solver::Iterative(cg),
        };
        let mut post = Self {
            params,
            data,
            op,
            solver,
            alpha: DVector::zeros(0),
            report: None,
        };
        let y = data.observed();
        let (sol, report) = post.solve(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
        post.alpha = sol.column(0).clone_owned();
        post.report = report;
        Ok(post)
    }

    /// `K_joint⁻¹ y`.
    pub fn alpha(&self) -> &DVector<T> {
        &self.alpha
    }

    /// CG outcome of the `K_joint⁻¹ y` solve, for the iterative backend.
    pub fn cg_report(&self) -> Option<&CgReport> {
        self.report.as_ref()
    }

    pub fn operator(&self) -> &ProjectedKroneckerOperator<T> {
        &self.op
    }

    fn solve(&self, rhs: &DMatrix<T>) -> Result<(DMatrix<T>, Option<CgReport>)> {
        match &self.solver {
            Solver::Dense(chol) => Ok((chol.solve(rhs), None)),
            Solver::Iterative(cfg) => {
                let (x, rep) = cg_solve(&self.op, rhs, cfg)?;
                Ok((x, Some(rep)))
            }
        }
    }

    fn cross_grams(&self, x_star: &DMatrix<T>, t_star: &[T]) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let k1s = rbf_gram(x_star, self.data.x(), &self.params.rbf_log_lengthscales)?;
        let k2s = matern52_gram(
            t_star,
            self.data.t(),
            self.params.matern_log_lengthscale,
            self.params.matern_log_outputscale,
        );
        Ok((k1s.transpose(), k2s))
    }

    /// `(k₁(X*, X) ⊗ k₂(t*, t)) Pᵀ c`, config-major over the test grid.
    fn cross_apply(k1s_t: &DMatrix<T>, k2s: &DMatrix<T>, mask_scatter: &[T]) -> Vec<T> {
        kron_apply(k1s_t, k2s, mask_scatter).as_slice().to_vec()
    }

    /// Posterior mean on the test grid, `n* × m*`, standardized outputs.
    pub fn mean(&self, x_star: &DMatrix<T>, t_star: &[T]) -> Result<DMatrix<T>> {
        let (k1s_t, k2s) = self.cross_grams(x_star, t_star)?;
        let padded = self.data.mask().scatter(self.alpha.as_slice());
        let flat = Self::cross_apply(&k1s_t, &k2s, &padded);
        Ok(DMatrix::from_row_slice(x_star.nrows(), t_star.len(), &flat))
    }

    /// Pathwise posterior samples on the test grid via Matheron's rule.
    ///
    /// A joint prior draw over (training ∪ test configs) × (training ∪ test
    /// steps) is taken from the Kronecker square root; its restriction to the
    /// observed cells, perturbed by observation noise, is corrected towards
    /// the data with one batched solve. Sample `s` uses the same random
    /// numbers regardless of how many samples are requested.
    pub fn sample(
        &self,
        x_star: &DMatrix<T>,
        t_star: &[T],
        count: usize,
        seed: u64,
    ) -> Result<(Vec<DMatrix<T>>, Option<CgReport>)> {
        if count == 0 {
            return Err(LkgpError::Invalid("sample count must be at least 1".into()));
        }
        let data = self.data;
        let (n, m) = (data.n(), data.m());
        let (x_union, x_map) = union_rows(data.x(), x_star)?;
        let (t_union, t_map) = union_points(data.t(), t_star);
        let (nu, mu) = (x_union.nrows(), t_union.len());
        let k1u = rbf_gram(&x_union, &x_union, &self.params.rbf_log_lengthscales)?;
        let k2u = matern52_gram(
            &t_union,
            &t_union,
            self.params.matern_log_lengthscale,
            self.params.matern_log_outputscale,
        );
        let root = KroneckerRoot::new(&k1u, &k2u)?;

        let p = self.op.dim();
        // jitter regularizes the solve only; it is not sampled as noise
        let noise_sd = self.op.noise().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut eps = DMatrix::<T>::zeros(nu * mu, count);
        let mut obs_noise = DMatrix::<T>::zeros(p, count);
        for s in 0..count {
            for v in eps.column_mut(s).iter_mut() {
                *v = T::lit(StandardNormal.sample(&mut rng));
            }
            for v in obs_noise.column_mut(s).iter_mut() {
                *v = T::lit(StandardNormal.sample(&mut rng)) * noise_sd;
            }
        }
        let prior = root.sample_batch(&eps)?;
        drop(eps);

        let y = data.observed();
        let mut rhs = DMatrix::<T>::zeros(p, count);
        for s in 0..count {
            let f = prior.column(s);
            for (r, (i, j)) in data.mask().cells().enumerate() {
                debug_assert!(i < n && j < m);
                rhs[(r, s)] = y[r] - f[i * mu + j] - obs_noise[(r, s)];
            }
        }
        drop(obs_noise);
        let (sol, report) = self.solve(&rhs)?;
        drop(rhs);

        let (k1s_t, k2s) = self.cross_grams(x_star, t_star)?;
        let (ns, ms) = (x_star.nrows(), t_star.len());
        let mut samples = Vec::with_capacity(count);
        for s in 0..count {
            let col = sol.column(s).clone_owned();
            let padded = data.mask().scatter(col.as_slice());
            let update = Self::cross_apply(&k1s_t, &k2s, &padded);
            let f = prior.column(s);
            samples.push(DMatrix::from_fn(ns, ms, |a, b| {
                f[x_map[a] * mu + t_map[b]] + update[a * ms + b]
            }));
        }
        Ok((samples, report))
    }
}

/// Appends rows of `extra` not already present (bitwise) in `base`; returns
/// the union and the union index of every row of `extra`.
fn union_rows<T: Scalar>(base: &DMatrix<T>, extra: &DMatrix<T>) -> Result<(DMatrix<T>, Vec<usize>)> {
    let d = base.ncols();
    if extra.ncols() != d {
        return Err(LkgpError::dims("test configurations", d, extra.ncols()));
    }
    let mut rows: Vec<Vec<T>> = base.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut map = Vec::with_capacity(extra.nrows());
    for r in extra.row_iter() {
        let row: Vec<T> = r.iter().copied().collect();
        let idx = match rows.iter().position(|b| *b == row) {
            Some(k) => k,
            None => {
                rows.push(row);
                rows.len() - 1
            }
        };
        map.push(idx);
    }
    let union = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
    Ok((union, map))
}

fn union_points<T: Scalar>(base: &[T], extra: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut pts = base.to_vec();
    let map = extra
        .iter()
        .map(|&v| match pts.iter().position(|&b| b == v) {
            Some(k) => k,
            None => {
                pts.push(v);
                pts.len() - 1
            }
        })
        .collect();
    (pts, map)
}
