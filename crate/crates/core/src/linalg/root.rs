use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::operator::{is_symmetric, kron_apply};
use crate::error::{LkgpError, Result};
use crate::scalar::Scalar;

/// Square-root factors `Lᵢ = Uᵢ Λᵢ^{1/2}` of two PSD matrices, so that
/// `(L₁ ⊗ L₂) ε` has covariance `K₁ ⊗ K₂` for standard normal `ε`.
///
/// Negative eigenvalues from round-off are clipped to zero.
#[derive(Debug, Clone)]
pub struct KroneckerRoot<T: Scalar> {
    left_root_t: DMatrix<T>,
    right_root: DMatrix<T>,
}

fn psd_root<T: Scalar>(k: &DMatrix<T>, name: &str) -> Result<DMatrix<T>> {
    if !k.is_square() || !is_symmetric(k, 1e-10) {
        return Err(LkgpError::Invalid(format!("{name} factor must be symmetric")));
    }
    let sym = (k + k.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::try_new(sym, T::lit(T::EPS), 0)
        .ok_or_else(|| LkgpError::Eigen(format!("{name} factor did not converge")))?;
    let mut root = eig.eigenvectors;
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        if !lambda.is_finite_val() {
            return Err(LkgpError::Eigen(format!("{name} factor has non-finite eigenvalues")));
        }
        root.column_mut(c).scale_mut(lambda.max(T::zero()).sqrt());
    }
    Ok(root)
}

impl<T: Scalar> KroneckerRoot<T> {
    pub fn new(k1: &DMatrix<T>, k2: &DMatrix<T>) -> Result<Self> {
        Ok(Self {
            left_root_t: psd_root(k1, "left")?.transpose(),
            right_root: psd_root(k2, "right")?,
        })
    }

    pub fn n(&self) -> usize {
        self.left_root_t.nrows()
    }

    pub fn m(&self) -> usize {
        self.right_root.nrows()
    }

    pub fn sample(&self, eps: &DVector<T>) -> Result<DVector<T>> {
        let dim = self.n() * self.m();
        if eps.len() != dim {
            return Err(LkgpError::dims("kron_root_sample", dim, eps.len()));
        }
        let out = kron_apply(&self.left_root_t, &self.right_root, eps.as_slice());
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    /// Applies the root to each column of `eps`.
    pub fn sample_batch(&self, eps: &DMatrix<T>) -> Result<DMatrix<T>> {
        let dim = self.n() * self.m();
        if eps.nrows() != dim {
            return Err(LkgpError::dims("kron_root_sample", dim, eps.nrows()));
        }
        let mut out = DMatrix::zeros(dim, eps.ncols());
        for (c, col) in eps.column_iter().enumerate() {
            let col = col.clone_owned();
            let res = kron_apply(&self.left_root_t, &self.right_root, col.as_slice());
            out.column_mut(c).copy_from_slice(res.as_slice());
        }
        Ok(out)
    }
}

/// One zero-mean Gaussian draw with covariance `K₁ ⊗ K₂`.
pub fn kron_root_sample<T: Scalar>(k1: &DMatrix<T>, k2: &DMatrix<T>, eps: &DVector<T>) -> Result<DVector<T>> {
    KroneckerRoot::new(k1, k2)?.sample(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identity_factors_return_eps() {
        let eps = DVector::<f64>::from_vec(vec![0.3, -1.0, 2.0, 0.7, 1.1, -0.2]);
        let out = kron_root_sample(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3), &eps).unwrap();
        // the eigenbasis of I is arbitrary, so compare norms and L Lᵀ
        assert!((out.norm() - eps.norm()).abs() < 1e-12);
        let root = KroneckerRoot::new(&DMatrix::<f64>::identity(2, 2), &DMatrix::identity(3, 3)).unwrap();
        let l = root.sample_batch(&DMatrix::identity(6, 6)).unwrap();
        assert!((&l * l.transpose() - DMatrix::<f64>::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn zero_eps_gives_zero() {
        let k1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let k2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let out = kron_root_sample(&k1, &k2, &DVector::zeros(4)).unwrap();
        assert_eq!(out, DVector::zeros(4));
    }

    #[test]
    fn root_reproduces_kronecker_covariance() {
        let k1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let k2 = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 1.5]);
        let root = KroneckerRoot::new(&k1, &k2).unwrap();
        let l = root.sample_batch(&DMatrix::identity(6, 6)).unwrap();
        let want = DMatrix::from_fn(6, 6, |r, c| k1[(r / 3, c / 3)] * k2[(r % 3, c % 3)]);
        assert!((&l * l.transpose() - want).amax() < 1e-12);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let k1 = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let k2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let eps = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            kron_root_sample(&k1, &k2, &eps).unwrap()
        };
        let (a, b) = (draw(), draw());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn singular_psd_factor_is_clipped() {
        let k1 = DMatrix::from_element(3, 3, 1.0);
        let root = KroneckerRoot::new(&k1, &DMatrix::identity(1, 1)).unwrap();
        let l = root.sample_batch(&DMatrix::identity(3, 3)).unwrap();
        assert!((&l * l.transpose() - k1).amax() < 1e-12);
    }
}
