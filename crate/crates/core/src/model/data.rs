use nalgebra::{DMatrix, DVector};

use crate::error::{LkgpError, Result};
use crate::linalg::ProjectionMask;
use crate::scalar::Scalar;

/// Transformed training data on a shared progression grid.
///
/// `y` is n × m; cells outside the mask are ignored and held at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData<T: Scalar> {
    x: DMatrix<T>,
    t: Vec<T>,
    y: DMatrix<T>,
    mask: ProjectionMask,
}

impl<T: Scalar> TrainingData<T> {
    pub fn new(x: DMatrix<T>, t: Vec<T>, y: DMatrix<T>, mask: ProjectionMask) -> Result<Self> {
        let (n, m) = (mask.n(), mask.m());
        if x.nrows() != n {
            return Err(LkgpError::dims("training configs", n, x.nrows()));
        }
        if x.ncols() == 0 {
            return Err(LkgpError::Invalid("hyperparameter dimension must be >= 1".into()));
        }
        if t.len() != m {
            return Err(LkgpError::dims("progression grid", m, t.len()));
        }
        if y.nrows() != n || y.ncols() != m {
            return Err(LkgpError::dims("training outputs", n * m, y.nrows() * y.ncols()));
        }
        if x.iter().chain(t.iter()).any(|v| !v.is_finite_val()) {
            return Err(LkgpError::Invalid("training inputs must be finite".into()));
        }
        let mut y = y;
        for i in 0..n {
            for j in 0..m {
                if !mask.is_observed(i, j) {
                    y[(i, j)] = T::zero();
                } else if !y[(i, j)].is_finite_val() {
                    return Err(LkgpError::Invalid(format!(
                        "observed value at config {i}, step {j} is not finite"
                    )));
                }
            }
        }
        Ok(Self { x, t, y, mask })
    }

    /// Full-grid data: every cell observed.
    pub fn full(x: DMatrix<T>, t: Vec<T>, y: DMatrix<T>) -> Result<Self> {
        let (n, m) = (x.nrows(), t.len());
        let mask = ProjectionMask::new(n, m, vec![true; n * m])?;
        Self::new(x, t, y, mask)
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn t(&self) -> &[T] {
        &self.t
    }

    /// Outputs on the full grid, zero in unobserved cells.
    pub fn y_grid(&self) -> &DMatrix<T> {
        &self.y
    }

    pub fn mask(&self) -> &ProjectionMask {
        &self.mask
    }

    pub fn n(&self) -> usize {
        self.mask.n()
    }

    pub fn m(&self) -> usize {
        self.mask.m()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.mask.count()
    }

    /// `P vec(Y)`: observed values in config-major order.
    pub fn observed(&self) -> DVector<T> {
        DVector::from_iterator(self.p(), self.mask.cells().map(|(i, j)| self.y[(i, j)]))
    }

    /// Reorders configurations: row `k` of the result is row `order[k]`.
    pub fn permute_configs(&self, order: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(LkgpError::Invalid("not a permutation of configs".into()));
        }
        let x = DMatrix::from_fn(n, self.d(), |k, c| self.x[(order[k], c)]);
        let y = DMatrix::from_fn(n, self.m(), |k, j| self.y[(order[k], j)]);
        let observed = (0..n)
            .flat_map(|k| (0..self.m()).map(move |j| (order[k], j)))
            .map(|(i, j)| self.mask.is_observed(i, j))
            .collect();
        let mask = ProjectionMask::new(n, self.m(), observed)?;
        Self::new(x, self.t.clone(), y, mask)
    }
}
