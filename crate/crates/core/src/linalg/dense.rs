//! Blocked dense factorizations for the exact backend. Block updates go
//! through nalgebra's matrix product, which is much faster than its
//! column-at-a-time Cholesky and triangular solves at large sizes.

use nalgebra::{Cholesky, DMatrix, DMatrixView, Dyn};

use crate::scalar::Scalar;

const BLOCK: usize = 96;

/// Right-looking blocked Cholesky. Returns `None` if `k` is not numerically
/// positive definite.
pub fn cholesky_blocked<T: Scalar>(mut k: DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    let p = k.nrows();
    assert_eq!(p, k.ncols(), "Cholesky needs a square matrix");
    let mut start = 0;
    while start < p {
        let b = BLOCK.min(p - start);
        let rest = p - start - b;
        let l11 = k.view((start, start), (b, b)).clone_owned().cholesky()?.unpack();
        if rest > 0 {
            // L21 = A21 L11⁻ᵀ, solved as L11 L21ᵀ = A21ᵀ
            let a21t = k.view((start + b, start), (rest, b)).transpose();
            let l21 = l11.solve_lower_triangular(&a21t)?.transpose();
            let mut a22 = k.view_mut((start + b, start + b), (rest, rest));
            a22.gemm(-T::one(), &l21, &l21.transpose(), T::one());
            k.view_mut((start + b, start), (rest, b)).copy_from(&l21);
        }
        k.view_mut((start, start), (b, b)).copy_from(&l11);
        start += b;
    }
    k.fill_upper_triangle(T::zero(), 1);
    Some(Cholesky::pack_dirty(k))
}

/// Inverse of a lower-triangular matrix by recursive 2×2 blocking.
fn lower_inverse<T: Scalar>(l: DMatrixView<'_, T>) -> DMatrix<T> {
    let p = l.nrows();
    if p <= BLOCK {
        return l
            .clone_owned()
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .expect("nonsingular Cholesky factor");
    }
    let h = p / 2;
    let a = lower_inverse(l.view((0, 0), (h, h)));
    let c = lower_inverse(l.view((h, h), (p - h, p - h)));
    let mut out = DMatrix::zeros(p, p);
    let l21a = l.view((h, 0), (p - h, h)) * &a;
    out.view_mut((h, 0), (p - h, h)).gemm(-T::one(), &c, &l21a, T::zero());
    out.view_mut((0, 0), (h, h)).copy_from(&a);
    out.view_mut((h, h), (p - h, p - h)).copy_from(&c);
    out
}

/// `K⁻¹ = L⁻ᵀ L⁻¹` from a Cholesky factorization.
pub fn spd_inverse<T: Scalar>(chol: &Cholesky<T, Dyn>) -> DMatrix<T> {
    let li = lower_inverse(chol.l_dirty().as_view());
    li.transpose() * li
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn spd(p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
        &a * a.transpose() + DMatrix::identity(p, p) * (p as f64)
    }

    #[test]
    fn matches_unblocked_factorization() {
        for p in [1, 5, 96, 97, 250] {
            let k = spd(p, p as u64);
            let ours = cholesky_blocked(k.clone()).unwrap();
            let reference = k.clone().cholesky().unwrap();
            assert!((ours.l() - reference.l()).amax() < 1e-10, "p={p}");
            let inv = spd_inverse(&ours);
            assert!((&inv * &k - DMatrix::identity(p, p)).amax() < 1e-10, "p={p}");
        }
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let mut k = spd(200, 3);
        k[(150, 150)] = -1e6;
        assert!(cholesky_blocked(k).is_none());
    }
}
