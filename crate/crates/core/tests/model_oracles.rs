mod common;

use common::*;
use lkgp::linalg::{CgConfig, ProjectionMask, DEFAULT_DENSE_CAP};
use lkgp::model::{fit_params, neg_map_objective, Backend, BackendChoice, FitConfig, ObjectiveConfig, Posterior};
use lkgp::{metrics_mse_llh, Params64, TrainingData64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn posterior<'a>(params: &'a Params64, data: &'a TrainingData64, backend: Backend, tol: f64) -> Posterior<'a, f64> {
    Posterior::new(
        params,
        data,
        backend,
        CgConfig::new(tol, 100_000).unwrap(),
        DEFAULT_DENSE_CAP,
    )
    .unwrap()
}

fn flat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

fn test_grid(rng: &mut rand_chacha::ChaCha8Rng, data: &TrainingData64, extra: usize) -> (DMatrix<f64>, Vec<f64>) {
    let d = data.d();
    let mut x = DMatrix::from_fn(data.n() + extra, d, |_, _| rng.random::<f64>());
    x.view_mut((0, 0), (data.n(), d)).copy_from(data.x());
    let mut t = data.t().to_vec();
    t.push(1.3);
    (x, t)
}

#[test]
fn full_grid_mean_equals_product_space_gp() {
    let mut rng = rng(1);
    for case in 0..10 {
        let (n, m, d) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..4));
        let data = random_problem(&mut rng, n, m, d, 1.0);
        assert!(data.mask().is_full());
        let params = random_params(&mut rng, d);
        let (xs, ts) = test_grid(&mut rng, &data, 3);
        let ours = posterior(&params, &data, Backend::Exact, 1e-10).mean(&xs, &ts).unwrap();
        let oracle = dense_posterior(&params, &data, &grid_cells(&xs, &ts));
        let diff = (flat(&ours) - oracle.mean).amax();
        assert!(diff < 1e-8, "case {case}: {diff}");
    }
}

#[test]
fn masked_mean_matches_dense_gp_for_both_backends() {
    let mut rng = rng(2);
    for case in 0..10 {
        let (n, m, d) = (rng.random_range(1..9), rng.random_range(1..7), rng.random_range(1..4));
        let data = random_problem(&mut rng, n, m, d, 0.6);
        let params = random_params(&mut rng, d);
        let (xs, ts) = test_grid(&mut rng, &data, 2);
        let oracle = dense_posterior(&params, &data, &grid_cells(&xs, &ts));
        let exact = flat(&posterior(&params, &data, Backend::Exact, 1e-10).mean(&xs, &ts).unwrap());
        let iterative = flat(
            &posterior(&params, &data, Backend::Iterative, 1e-10)
                .mean(&xs, &ts)
                .unwrap(),
        );
        assert!((&exact - &oracle.mean).amax() < 1e-8, "case {case}");
        assert!((&iterative - &exact).amax() < 1e-6, "case {case}");
    }
}

#[test]
fn single_curve_matches_one_dimensional_gp() {
    let mut rng = rng(3);
    let data = random_problem(&mut rng, 1, 7, 2, 0.7);
    let params = random_params(&mut rng, 2);
    let ts: Vec<f64> = (0..15).map(|k| k as f64 / 10.0).collect();
    let ours = posterior(&params, &data, Backend::Exact, 1e-10)
        .mean(data.x(), &ts)
        .unwrap();
    // the RBF factor is 1 for a single config, leaving a GP in t alone
    let obs: Vec<usize> = (0..7).filter(|&j| data.mask().is_observed(0, j)).collect();
    let k = |a: f64, b: f64| matern52(a, b, params.matern_log_lengthscale, params.matern_log_outputscale);
    let shift = params.log_noise.exp() + 1e-6 * params.matern_log_outputscale.exp();
    let kk = DMatrix::from_fn(obs.len(), obs.len(), |r, c| k(data.t()[obs[r]], data.t()[obs[c]]))
        + DMatrix::identity(obs.len(), obs.len()) * shift;
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|&j| data.y_grid()[(0, j)]));
    let alpha = kk.cholesky().unwrap().solve(&y);
    for (b, &t) in ts.iter().enumerate() {
        let want: f64 = obs.iter().zip(alpha.iter()).map(|(&j, a)| k(t, data.t()[j]) * a).sum();
        assert!((ours[(0, b)] - want).abs() < 1e-8);
    }
}

#[test]
fn noiseless_mean_interpolates_observations() {
    let (data, params) = sampling_problem(-40.0);
    let mean = posterior(&params, &data, Backend::Exact, 1e-12)
        .mean(data.x(), data.t())
        .unwrap();
    for (i, j) in data.mask().cells() {
        assert!((mean[(i, j)] - data.y_grid()[(i, j)]).abs() < 1e-6);
    }
}

#[test]
fn exact_objective_matches_dense_formula() {
    let mut rng = rng(5);
    let cfg = ObjectiveConfig::new(Backend::Exact);
    for _ in 0..10 {
        let (n, m, d) = (rng.random_range(1..8), rng.random_range(1..6), rng.random_range(1..4));
        let data = random_problem(&mut rng, n, m, d, 0.7);
        let params = random_params(&mut rng, d);
        let got = neg_map_objective(&params, &data, &cfg).unwrap().value;
        let want = dense_nll(&params, &data) - dense_log_prior(&params);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn single_cell_objective_closed_form() {
    let data = TrainingData64::full(DMatrix::from_element(1, 1, 0.3), vec![0.5], DMatrix::zeros(1, 1)).unwrap();
    let params = Params64 {
        rbf_log_lengthscales: vec![0.2],
        matern_log_lengthscale: -1.0,
        matern_log_outputscale: 0.0,
        log_noise: 0.0,
    };
    let got = neg_map_objective(&params, &data, &ObjectiveConfig::new(Backend::Exact))
        .unwrap()
        .value;
    let k: f64 = 2.0 + 1e-6;
    let want = 0.5 * k.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() - dense_log_prior(&params);
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn iterative_objective_within_two_percent_of_exact() {
    let mut rng = rng(6);
    let exact_cfg = ObjectiveConfig::new(Backend::Exact);
    let mut it_cfg = ObjectiveConfig::new(Backend::Iterative);
    it_cfg.probes = 64;
    it_cfg.cg = CgConfig::new(1e-8, 100_000).unwrap();
    let fit_cfg = FitConfig {
        backend: BackendChoice::Exact,
        ..FitConfig::default()
    };
    for case in 0..8 {
        let (n, m, d) = (
            rng.random_range(6..=16),
            rng.random_range(6..=16),
            rng.random_range(1..4),
        );
        let keep = rng.random_range(0.5..1.0);
        let data = random_problem(&mut rng, n, m, d, keep);
        assert!(data.p() <= 256);
        let (params, _) = fit_params(&data, &fit_cfg).unwrap();
        let e = neg_map_objective(&params, &data, &exact_cfg).unwrap().value;
        let i = neg_map_objective(&params, &data, &it_cfg).unwrap().value;
        assert!((e - i).abs() <= 0.02 * e.abs(), "case {case}: exact {e}, iterative {i}");
    }
}

#[test]
fn backends_agree_on_small_problems_with_tight_settings() {
    let mut rng = rng(12);
    let exact_cfg = ObjectiveConfig::new(Backend::Exact);
    let mut it_cfg = ObjectiveConfig::new(Backend::Iterative);
    it_cfg.probes = 4096;
    it_cfg.cg = CgConfig::new(1e-10, 100_000).unwrap();
    for case in 0..20 {
        let (n, m, d) = (rng.random_range(1..=8), rng.random_range(1..=6), rng.random_range(1..4));
        let keep = rng.random_range(0.2..1.0);
        let data = random_problem(&mut rng, n, m, d, keep);
        let params = random_params(&mut rng, d);
        let e = neg_map_objective(&params, &data, &exact_cfg).unwrap().value;
        let i = neg_map_objective(&params, &data, &it_cfg).unwrap().value;
        assert!((e - i).abs() <= 0.02 * e.abs(), "case {case}: exact {e}, iterative {i}");
        let (xs, ts) = test_grid(&mut rng, &data, 2);
        let a = posterior(&params, &data, Backend::Exact, 1e-10).mean(&xs, &ts).unwrap();
        let b = posterior(&params, &data, Backend::Iterative, 1e-10)
            .mean(&xs, &ts)
            .unwrap();
        assert!((a - b).amax() <= 1e-6, "case {case}");
    }
}

#[test]
fn exact_gradient_matches_central_differences() {
    let mut rng = rng(7);
    let cfg = ObjectiveConfig::new(Backend::Exact);
    let h = 1e-5;
    for setting in 0..24 {
        let d = rng.random_range(1..4);
        let data = random_problem(&mut rng, 4, 3, d, 0.8);
        let params = random_params(&mut rng, d);
        let analytic = neg_map_objective(&params, &data, &cfg).unwrap().grad;
        let theta = params.to_vec();
        for k in 0..theta.len() {
            let eval = |delta: f64| {
                let mut th = theta.clone();
                th[k] += delta;
                let p = Params64::from_slice(d, &th).unwrap();
                neg_map_objective(&p, &data, &cfg).unwrap().value
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic[k] - fd).abs();
            assert!(
                err <= 1e-4 * fd.abs().max(analytic[k].abs()) + 1e-8,
                "setting {setting}, component {k}: analytic {} vs fd {fd}",
                analytic[k]
            );
        }
    }
}

#[test]
fn predictions_are_permutation_equivariant() {
    let mut rng = rng(8);
    for _ in 0..5 {
        let data = random_problem(&mut rng, 6, 5, 2, 0.6);
        let params = random_params(&mut rng, 2);
        let (xs, ts) = test_grid(&mut rng, &data, 2);
        let order = [3, 0, 5, 1, 4, 2];
        let permuted = data.permute_configs(&order).unwrap();
        for backend in [Backend::Exact, Backend::Iterative] {
            let a = posterior(&params, &data, backend, 1e-12).mean(&xs, &ts).unwrap();
            let b = posterior(&params, &permuted, backend, 1e-12).mean(&xs, &ts).unwrap();
            assert!((a - b).amax() < 1e-10);
        }
    }
}

#[test]
fn revealing_observations_never_increases_final_variance() {
    let mut rng = rng(9);
    for _ in 0..10 {
        let (n, m) = (rng.random_range(2..6), rng.random_range(3..7));
        let full = random_problem(&mut rng, n, m, 2, 1.0);
        let params = random_params(&mut rng, 2);
        let target = rng.random_range(0..n);
        let last = (
            full.x().row(target).iter().copied().collect::<Vec<_>>(),
            full.t()[m - 1],
        );
        let mut prev = f64::INFINITY;
        // reveal the target curve one step at a time; other curves stay full
        for revealed in 1..=m {
            let obs: Vec<bool> = (0..n * m).map(|c| c / m != target || c % m < revealed).collect();
            let data = TrainingData64::new(
                full.x().clone(),
                full.t().to_vec(),
                full.y_grid().clone(),
                ProjectionMask::new(n, m, obs).unwrap(),
            )
            .unwrap();
            let var = dense_posterior(&params, &data, std::slice::from_ref(&last)).cov[(0, 0)];
            assert!(var <= prev + 1e-12, "{var} > {prev}");
            prev = var;
        }
    }
}

/// p = 12 problem shared by the sampling tests.
fn sampling_problem(log_noise: f64) -> (TrainingData64, Params64) {
    let x = DMatrix::from_row_slice(4, 2, &[0.1, 0.1, 0.9, 0.15, 0.2, 0.85, 0.8, 0.9]);
    let t = vec![0.1, 0.35, 0.6, 0.9];
    let mut obs = vec![true; 16];
    for c in [3, 6, 7, 15] {
        obs[c] = false;
    }
    let mask = ProjectionMask::new(4, 4, obs).unwrap();
    let y = DMatrix::from_fn(4, 4, |i, j| {
        if mask.is_observed(i, j) {
            (i as f64 - j as f64) * 0.3
        } else {
            0.0
        }
    });
    let data = TrainingData64::new(x, t, y, mask).unwrap();
    assert_eq!(data.p(), 12);
    let params = Params64 {
        rbf_log_lengthscales: vec![-1.0, -0.8],
        matern_log_lengthscale: -1.5,
        matern_log_outputscale: 0.0,
        log_noise,
    };
    (data, params)
}

#[test]
fn matheron_samples_match_dense_posterior_moments() {
    let (data, params) = sampling_problem(-2.0);
    let xs = data.x().clone();
    let ts = vec![0.1, 0.35, 0.6, 0.9, 1.1];
    let post = posterior(&params, &data, Backend::Exact, 1e-10);
    let count = 50_000;
    let (samples, _) = post.sample(&xs, &ts, count, 99).unwrap();
    let cells = grid_cells(&xs, &ts);
    let q = cells.len();
    let oracle = dense_posterior(&params, &data, &cells);
    let mut mean = DVector::<f64>::zeros(q);
    for s in &samples {
        mean += flat(s);
    }
    mean /= count as f64;
    let mut cov = DMatrix::<f64>::zeros(q, q);
    for s in &samples {
        let c = flat(s) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (count - 1) as f64;
    let c = &oracle.cov;
    for a in 0..q {
        let se = (c[(a, a)].max(0.0) / count as f64).sqrt();
        assert!((mean[a] - oracle.mean[a]).abs() <= 4.0 * se + 1e-12, "mean {a}");
        for b in 0..q {
            let se = ((c[(a, a)] * c[(b, b)] + c[(a, b)].powi(2)).max(0.0) / count as f64).sqrt();
            assert!((cov[(a, b)] - c[(a, b)]).abs() <= 4.0 * se + 1e-12, "cov ({a},{b})");
        }
    }
}

#[test]
fn noiseless_samples_interpolate_observations() {
    let (data, params) = sampling_problem(-40.0);
    let post = posterior(&params, &data, Backend::Exact, 1e-12);
    let (samples, _) = post.sample(data.x(), data.t(), 64, 3).unwrap();
    for s in &samples {
        for (i, j) in data.mask().cells() {
            assert!((s[(i, j)] - data.y_grid()[(i, j)]).abs() < 1e-5);
        }
    }
}

#[test]
fn samples_are_seed_reproducible_and_share_a_mean() {
    let (data, params) = sampling_problem(-2.0);
    let post = posterior(&params, &data, Backend::Iterative, 1e-10);
    let ts = data.t().to_vec();
    let (a, _) = post.sample(data.x(), &ts, 4000, 1).unwrap();
    let (b, _) = post.sample(data.x(), &ts, 4000, 1).unwrap();
    let (c, _) = post.sample(data.x(), &ts, 4000, 2).unwrap();
    assert!(a
        .iter()
        .zip(&b)
        .all(|(u, v)| u.iter().zip(v.iter()).all(|(x, y)| x.to_bits() == y.to_bits())));
    let avg = |s: &[DMatrix<f64>]| s.iter().fold(DMatrix::zeros(4, 4), |acc, m| acc + m) / s.len() as f64;
    let (ma, mc) = (avg(&a), avg(&c));
    assert!(ma != mc);
    let exact = post.mean(data.x(), &ts).unwrap();
    assert!((ma - &exact).amax() < 0.1 && (mc - &exact).amax() < 0.1);
}

#[test]
fn metrics_match_dense_gp_computation() {
    let (data, params) = sampling_problem(-2.0);
    let xs = DMatrix::from_row_slice(2, 2, &[0.2, 0.7, 0.9, 0.1]);
    let ts = [0.9];
    let cells = grid_cells(&xs, &ts);
    let oracle = dense_posterior(&params, &data, &cells);
    let truth = [0.25, -0.4];
    let ours = posterior(&params, &data, Backend::Exact, 1e-10).mean(&xs, &ts).unwrap();
    let noise = params.log_noise.exp();
    let var: Vec<f64> = (0..2).map(|a| oracle.cov[(a, a)] + noise).collect();
    let m = metrics_mse_llh(&[ours[(0, 0)], ours[(1, 0)]], &var, &truth).unwrap();
    let mse = (0..2).map(|a| (oracle.mean[a] - truth[a]).powi(2)).sum::<f64>() / 2.0;
    let llh = (0..2)
        .map(|a| normal_logpdf(truth[a], oracle.mean[a], var[a].sqrt()))
        .sum::<f64>()
        / 2.0;
    assert!((m.mse - mse).abs() < 1e-8 && (m.llh - llh).abs() < 1e-8);
}
