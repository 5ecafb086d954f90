use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{LkgpError, Result};
use crate::scalar::Scalar;

/// Relative jitter added to the diagonal of projected Kronecker operators,
/// scaled by the mean observed diagonal of the Kronecker product.
pub const DEFAULT_JITTER_REL: f64 = 1e-6;

/// Largest operator dimension [`dense_materialize`] agrees to build.
pub const DEFAULT_DENSE_CAP: usize = 8192;

/// A symmetric linear map that can only be applied, never inspected.
///
/// `apply_batch` treats each column of `rhs` as an independent vector.
pub trait LinearOperator<T: Scalar> {
    fn dim(&self) -> usize;

    fn apply_batch(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>>;

    fn apply(&self, v: &DVector<T>) -> Result<DVector<T>> {
        let out = self.apply_batch(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
        Ok(DVector::from_column_slice(out.as_slice()))
    }
}

fn check_rows<T: Scalar>(ctx: &'static str, dim: usize, rhs: &DMatrix<T>) -> Result<()> {
    if rhs.nrows() != dim {
        return Err(LkgpError::dims(ctx, dim, rhs.nrows()));
    }
    Ok(())
}

impl<T: Scalar> LinearOperator<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_batch(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_rows("dense operator", self.ncols(), rhs)?;
        Ok(self * rhs)
    }
}

/// `scale * I` of a given dimension.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity<T> {
    pub dim: usize,
    pub scale: T,
}

impl<T: Scalar> LinearOperator<T> for ScaledIdentity<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_batch(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_rows("scaled identity", self.dim, rhs)?;
        Ok(rhs * self.scale)
    }
}

pub(crate) fn is_symmetric<T: Scalar>(a: &DMatrix<T>, rel: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = T::tol(rel) * scale.max(T::one());
    let n = a.nrows();
    (0..n).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

/// Computes `(A ⊗ B) v` for the config-major flattening `v[i * m + j]`.
///
/// `a_t` is `Aᵀ` (n_in × n_out), `b` is `B` (m_out × m_in). Viewed
/// column-major, `v` is the m_in × n_in matrix `W`, and the result is
/// `B W Aᵀ` read back column-major.
pub(crate) fn kron_apply<T: Scalar>(a_t: &DMatrix<T>, b: &DMatrix<T>, v: &[T]) -> DMatrix<T> {
    let w = DMatrixView::from_slice(v, b.ncols(), a_t.nrows());
    let bw = b * w;
    bw * a_t
}

/// The nm × nm matrix `K₁ ⊗ K₂`, stored as its two factors.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerOperator<T: Scalar> {
    left: DMatrix<T>,
    right: DMatrix<T>,
}

impl<T: Scalar> KroneckerOperator<T> {
    /// Both factors must be square and symmetric to 1e-12 relative.
    pub fn new(left: DMatrix<T>, right: DMatrix<T>) -> Result<Self> {
        for (name, f) in [("left", &left), ("right", &right)] {
            if !f.is_square() || f.nrows() == 0 {
                return Err(LkgpError::Invalid(format!(
                    "{name} Kronecker factor must be square and non-empty, got {}x{}",
                    f.nrows(),
                    f.ncols()
                )));
            }
            if !is_symmetric(f, 1e-12) {
                return Err(LkgpError::Invalid(format!("{name} Kronecker factor is not symmetric")));
            }
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &DMatrix<T> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<T> {
        &self.right
    }

    /// Number of configurations (rows of the latent grid).
    pub fn n(&self) -> usize {
        self.left.nrows()
    }

    /// Number of progression steps (columns of the latent grid).
    pub fn m(&self) -> usize {
        self.right.nrows()
    }

    pub fn kron_mvm(&self, v: &DVector<T>) -> Result<DVector<T>> {
        if v.len() != self.n() * self.m() {
            return Err(LkgpError::dims("kron_mvm", self.n() * self.m(), v.len()));
        }
        let out = kron_apply(&self.left, &self.right, v.as_slice());
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    /// Entry `(i, j)` of the latent diagonal, `K₁[i,i] K₂[j,j]`.
    pub fn diag_at(&self, i: usize, j: usize) -> T {
        self.left[(i, i)] * self.right[(j, j)]
    }
}

impl<T: Scalar> LinearOperator<T> for KroneckerOperator<T> {
    fn dim(&self) -> usize {
        self.n() * self.m()
    }

    fn apply_batch(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_rows("kron_mvm", self.dim(), rhs)?;
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for (c, col) in rhs.column_iter().enumerate() {
            let col = col.clone_owned();
            let res = kron_apply(&self.left, &self.right, col.as_slice());
            out.column_mut(c).copy_from_slice(res.as_slice());
        }
        Ok(out)
    }
}

/// Which cells of the n × m latent grid hold observations.
///
/// Cell `(i, j)` flattens to `i * m + j`; observed cells are enumerated in
/// that order, which fixes the layout of every projected vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionMask {
    n: usize,
    m: usize,
    observed: Vec<bool>,
    indices: Vec<usize>,
}

impl ProjectionMask {
    /// `observed` is config-major, length `n * m`. Every config must have
    /// at least one observed step.
    pub fn new(n: usize, m: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != n * m {
            return Err(LkgpError::dims("projection mask", n * m, observed.len()));
        }
        if n == 0 || m == 0 {
            return Err(LkgpError::Invalid("projection mask grid is empty".into()));
        }
        for i in 0..n {
            if !observed[i * m..(i + 1) * m].iter().any(|&o| o) {
                return Err(LkgpError::Invalid(format!("config row {i} has no observed entries")));
            }
        }
        let indices = observed
            .iter()
            .enumerate()
            .filter_map(|(k, &o)| o.then_some(k))
            .collect();
        Ok(Self {
            n,
            m,
            observed,
            indices,
        })
    }

    pub fn full(n: usize, m: usize) -> Self {
        Self::new(n, m, vec![true; n * m]).expect("full mask is valid for n, m >= 1")
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(LkgpError::Invalid("ragged mask rows".into()));
        }
        Self::new(n, m, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of observed cells, `p`.
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.n * self.m
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.m + j]
    }

    /// Flat config-major indices of observed cells, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `(config, step)` of each observed cell, in projected order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.indices.iter().map(move |&k| (k / self.m, k % self.m))
    }

    pub fn observed_flat(&self) -> &[bool] {
        &self.observed
    }

    /// `P v`: picks observed entries out of a full-grid vector.
    pub fn gather<T: Scalar>(&self, full: &[T]) -> Vec<T> {
        self.indices.iter().map(|&k| full[k]).collect()
    }

    /// `Pᵀ v`: zero-pads an observed vector onto the full grid.
    pub fn scatter<T: Scalar>(&self, observed: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n * self.m];
        for (&k, &v) in self.indices.iter().zip(observed) {
            out[k] = v;
        }
        out
    }
}

/// `P (K₁ ⊗ K₂) Pᵀ + (σ² + jitter) I` over the observed cells of a mask.
#[derive(Debug, Clone)]
pub struct ProjectedKroneckerOperator<T: Scalar> {
    kron: KroneckerOperator<T>,
    mask: ProjectionMask,
    noise: T,
    jitter: T,
}

impl<T: Scalar> ProjectedKroneckerOperator<T> {
    /// Uses the default jitter, `1e-6` times the mean observed diagonal.
    pub fn new(kron: KroneckerOperator<T>, mask: ProjectionMask, noise: T) -> Result<Self> {
        let jitter = T::lit(DEFAULT_JITTER_REL) * observed_diag_mean(&kron, &mask);
        Self::with_jitter(kron, mask, noise, jitter)
    }

    pub fn with_jitter(kron: KroneckerOperator<T>, mask: ProjectionMask, noise: T, jitter: T) -> Result<Self> {
        if kron.n() != mask.n() || kron.m() != mask.m() {
            return Err(LkgpError::Invalid(format!(
                "mask grid {}x{} does not match Kronecker factors {}x{}",
                mask.n(),
                mask.m(),
                kron.n(),
                kron.m()
            )));
        }
        if noise < T::zero() || jitter < T::zero() || !noise.is_finite_val() {
            return Err(LkgpError::Invalid(
                "noise and jitter must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            kron,
            mask,
            noise,
            jitter,
        })
    }

    pub fn kron(&self) -> &KroneckerOperator<T> {
        &self.kron
    }

    pub fn mask(&self) -> &ProjectionMask {
        &self.mask
    }

    pub fn noise(&self) -> T {
        self.noise
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Total diagonal shift, `σ² + jitter`.
    pub fn diag_shift(&self) -> T {
        self.noise + self.jitter
    }

    pub fn projected_mvm(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.apply(v)
    }
}

/// Mean of `K₁[i,i] K₂[j,j]` over observed cells.
pub fn observed_diag_mean<T: Scalar>(kron: &KroneckerOperator<T>, mask: &ProjectionMask) -> T {
    let sum = mask.cells().fold(T::zero(), |acc, (i, j)| acc + kron.diag_at(i, j));
    sum / T::lit(mask.count() as f64)
}

impl<T: Scalar> LinearOperator<T> for ProjectedKroneckerOperator<T> {
    fn dim(&self) -> usize {
        self.mask.count()
    }

    fn apply_batch(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_rows("projected_mvm", self.dim(), rhs)?;
        let shift = self.diag_shift();
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for (c, col) in rhs.column_iter().enumerate() {
            let col = col.clone_owned();
            let padded = self.mask.scatter(col.as_slice());
            let full = kron_apply(self.kron.left(), self.kron.right(), &padded);
            let full = full.as_slice();
            let mut dst = out.column_mut(c);
            for (r, &k) in self.mask.indices().iter().enumerate() {
                dst[r] = full[k] + shift * col[r];
            }
        }
        Ok(out)
    }
}

/// Builds the explicit p × p matrix of a projected operator, refusing when
/// `p > cap`.
pub fn dense_materialize<T: Scalar>(op: &ProjectedKroneckerOperator<T>, cap: usize) -> Result<DMatrix<T>> {
    let p = op.dim();
    if p > cap {
        return Err(LkgpError::DenseCapExceeded { size: p, cap });
    }
    let cells: Vec<(usize, usize)> = op.mask().cells().collect();
    let (k1, k2) = (op.kron().left(), op.kron().right());
    let shift = op.diag_shift();
    Ok(DMatrix::from_fn(p, p, |a, b| {
        let (ia, ja) = cells[a];
        let (ib, jb) = cells[b];
        let v = k1[(ia, ib)] * k2[(ja, jb)];
        if a == b {
            v + shift
        } else {
            v
        }
    }))
}
