mod common;

use common::*;
use lkgp::kernels::{matern52_gram, rbf_gram};
use lkgp::linalg::{
    cg_solve, dense_materialize, kron_root_sample, CgConfig, KroneckerOperator, LinearOperator,
    ProjectedKroneckerOperator,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn operator_for(
    seed: u64,
    n: usize,
    m: usize,
    d: usize,
) -> (ProjectedKroneckerOperator<f64>, lkgp::TrainingData64, lkgp::Params64) {
    let mut rng = rng(seed);
    let data = random_problem(&mut rng, n, m, d, rng_keep(seed));
    let params = random_params(&mut rng, d);
    let k1 = rbf_gram(data.x(), data.x(), &params.rbf_log_lengthscales).unwrap();
    let k2 = matern52_gram(
        data.t(),
        data.t(),
        params.matern_log_lengthscale,
        params.matern_log_outputscale,
    );
    let op = ProjectedKroneckerOperator::new(
        KroneckerOperator::new(k1, k2).unwrap(),
        data.mask().clone(),
        params.noise(),
    )
    .unwrap();
    (op, data, params)
}

fn rng_keep(seed: u64) -> f64 {
    0.2 + 0.8 * (seed % 97) as f64 / 96.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projected_mvm_matches_dense(seed in any::<u64>(), n in 1usize..=8, m in 1usize..=8, d in 1usize..=4) {
        let (op, data, params) = operator_for(seed, n, m, d);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let v = DVector::from_fn(op.dim(), |_, _| StandardNormal.sample(&mut r));
        let dense = dense_materialize(&op, 8192).unwrap();
        let diff = (op.projected_mvm(&v).unwrap() - &dense * &v).amax();
        prop_assert!(diff <= 1e-12, "diff {diff}");
        // the dense path itself against an entrywise product-kernel oracle
        let oracle = train_cov(&params, &data);
        prop_assert!((dense - oracle).amax() <= 1e-12);
    }

    #[test]
    fn converged_columns_meet_tolerance(seed in any::<u64>(), n in 1usize..=8, m in 1usize..=8, tol_exp in 2i32..=10) {
        let (op, _, _) = operator_for(seed, n, m, 2);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let b = DMatrix::from_fn(op.dim(), 3, |_, _| StandardNormal.sample(&mut r));
        let tol = 10f64.powi(-tol_exp);
        let (x, report) = cg_solve(&op, &b, &CgConfig::new(tol, 10_000).unwrap()).unwrap();
        let resid = &b - op.apply_batch(&x).unwrap();
        for c in 0..3 {
            if report.converged[c] {
                let rel = resid.column(c).norm() / b.column(c).norm();
                prop_assert!(rel <= tol, "column {c}: {rel} > {tol}");
            }
        }
    }
}

#[test]
fn kronecker_root_covariance_by_monte_carlo() {
    let k1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.5]);
    let k2 = DMatrix::from_row_slice(2, 2, &[2.0, -0.4, -0.4, 0.8]);
    let target = DMatrix::from_fn(4, 4, |r, c| k1[(r / 2, c / 2)] * k2[(r % 2, c % 2)]);
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut acc = DMatrix::<f64>::zeros(4, 4);
    for _ in 0..draws {
        let eps = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
        let f = kron_root_sample(&k1, &k2, &eps).unwrap();
        acc.ger(1.0, &f, &f, 1.0);
    }
    let emp = acc / draws as f64;
    for r in 0..4 {
        for c in 0..4 {
            // zero-mean Gaussian: var(f_r f_c) = C_rr C_cc + C_rc²
            let se = ((target[(r, r)] * target[(c, c)] + target[(r, c)].powi(2)) / draws as f64).sqrt();
            assert!(
                (emp[(r, c)] - target[(r, c)]).abs() <= 5.0 * se,
                "entry ({r},{c}): {} vs {}",
                emp[(r, c)],
                target[(r, c)]
            );
        }
    }
}

#[test]
fn kron_mvm_matches_explicit_product_on_random_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (n, m) = (rng.random_range(1..6), rng.random_range(1..6));
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let b = DMatrix::<f64>::from_fn(m, m, |_, _| StandardNormal.sample(&mut rng));
        let (k1, k2) = (&a * a.transpose(), &b * b.transpose());
        let v = DVector::from_fn(n * m, |_, _| StandardNormal.sample(&mut rng));
        let explicit = k1.kronecker(&k2);
        let op = KroneckerOperator::new(k1, k2).unwrap();
        assert!((op.kron_mvm(&v).unwrap() - explicit * v).amax() < 1e-12);
    }
}
