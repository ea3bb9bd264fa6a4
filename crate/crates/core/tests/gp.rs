mod common;

use adakrig::doe::Domain;
use adakrig::gp::{fit_kriging, q2_loocv, FitOptions, Kernel, KernelFamily, KrigingModel, Scaling, TrendBasis};
use common::{bordered_oracle, spread_points};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_instance(rng: &mut ChaCha20Rng) -> (Vec<Vec<f64>>, Vec<f64>, TrendBasis, Kernel) {
    let dim = rng.random_range(1..=3);
    let trend = [TrendBasis::None, TrendBasis::Constant, TrendBasis::Linear][rng.random_range(0..3)];
    let n = rng.random_range(trend.len(dim).max(1)..=5);
    let pts = spread_points(n, dim, 0.15, rng);
    let obs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let family = if rng.random() { KernelFamily::SquaredExponential } else { KernelFamily::Matern52 };
    let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..0.5)).collect();
    let kernel = Kernel::new(family, rng.random_range(0.5..3.0), ls, 0.0).unwrap();
    (pts, obs, trend, kernel)
}

#[test]
fn prediction_matches_bordered_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..60 {
        let (pts, obs, trend, kernel) = random_instance(&mut rng);
        let dim = pts[0].len();
        let model = KrigingModel::condition(&pts, &obs, trend, kernel.clone(), Scaling::identity(dim)).unwrap();
        let a: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let (mean, var) = bordered_oracle(&pts, &obs, trend, &kernel, &a, &a);
        let (_, cov) = bordered_oracle(&pts, &obs, trend, &kernel, &a, &b);
        let p = model.predict(&a).unwrap();
        let scale = obs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        assert!((p.mean - mean).abs() <= 1e-10 * scale, "{} vs {mean}", p.mean);
        assert!((p.variance - var).abs() <= 1e-10 * kernel.variance, "{} vs {var}", p.variance);
        let c = model.kriging_cov(&a, &b).unwrap();
        assert!((c - cov).abs() <= 1e-10 * kernel.variance, "{c} vs {cov}");
    }
}

#[test]
fn joint_and_pointwise_agree() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let (pts, obs, trend, kernel) = random_instance(&mut rng);
    let dim = pts[0].len();
    let model = KrigingModel::condition(&pts, &obs, trend, kernel, Scaling::identity(dim)).unwrap();
    let zs: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let (mean, cov) = model.joint(&zs).unwrap();
    for i in 0..4 {
        let p = model.predict(&zs[i]).unwrap();
        assert!((mean[i] - p.mean).abs() < 1e-12);
        assert!((cov[(i, i)] - p.variance).abs() < 1e-12);
        for j in 0..4 {
            assert!((cov[(i, j)] - model.kriging_cov(&zs[i], &zs[j]).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn fantasy_update_equals_reconditioning() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let pts = spread_points(6, 2, 0.1, &mut rng);
    let obs: Vec<f64> = pts.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
    let kernel = Kernel::new(KernelFamily::Matern52, 1.2, vec![0.3, 0.4], 1e-10).unwrap();
    let model = KrigingModel::condition(&pts, &obs, TrendBasis::Linear, kernel.clone(), Scaling::identity(2)).unwrap();
    let z = vec![0.37, 0.61];
    let updated = model.virtual_update(&z, 0.25).unwrap();
    let mut pts2 = pts.clone();
    pts2.push(z);
    let mut obs2 = obs.clone();
    obs2.push(0.25);
    let direct = KrigingModel::condition(&pts2, &obs2, TrendBasis::Linear, kernel, Scaling::identity(2)).unwrap();
    for _ in 0..20 {
        let w = [rng.random::<f64>(), rng.random::<f64>()];
        let (a, b) = (updated.predict(&w).unwrap(), direct.predict(&w).unwrap());
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!((a.variance - b.variance).abs() < 1e-9);
    }
}

#[test]
fn conditional_samples_have_kriging_moments() {
    let k = Kernel::squared_exponential(1.0, vec![0.3]).unwrap();
    let model =
        KrigingModel::condition(&[vec![0.1], vec![0.6]], &[1.0, -0.5], TrendBasis::Constant, k, Scaling::identity(1))
            .unwrap();
    let zs = vec![vec![0.3], vec![0.9]];
    let (mean, cov) = model.joint(&zs).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    let n = 40_000;
    let draws: Vec<_> = (0..n).map(|_| model.conditional_sample(&zs, &mut rng).unwrap()).collect();
    for i in 0..2 {
        let m = draws.iter().map(|d| d[i]).sum::<f64>() / n as f64;
        assert!((m - mean[i]).abs() < 4.0 * (cov[(i, i)] / n as f64).sqrt());
    }
    let c01 = draws.iter().map(|d| (d[0] - mean[0]) * (d[1] - mean[1])).sum::<f64>() / n as f64;
    assert!((c01 - cov[(0, 1)]).abs() < 0.05 * (cov[(0, 0)] * cov[(1, 1)]).sqrt());
}

#[test]
fn fitted_model_predicts_smooth_function() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let dom = Domain::new(vec![-1.0, 2.0], vec![1.0, 5.0]).unwrap();
    let design = adakrig::doe::maximin_lhd(20, &dom, &mut rng, 500).unwrap();
    let pts = design.coordinates();
    let f = |z: &[f64]| (2.0 * z[0]).sin() + 0.3 * z[1];
    let obs: Vec<f64> = pts.iter().map(|z| f(z)).collect();
    let model = fit_kriging(&pts, &obs, &dom, &FitOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let z = dom.sample_uniform(&mut rng);
        worst = worst.max((model.predict(&z).unwrap().mean - f(&z)).abs());
    }
    assert!(worst < 0.05, "max error {worst}");
    let q2 = q2_loocv(&pts, &obs, model.trend(), model.kernel(), model.scaling()).unwrap();
    assert!(q2 > 0.99, "Q2 {q2}");
}

prop_compose! {
    fn instance()(seed in any::<u64>()) -> (Vec<Vec<f64>>, Vec<f64>, TrendBasis, Kernel, u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (p, o, t, k) = random_instance(&mut rng);
        (p, o, t, k, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolates_design_points((pts, obs, trend, kernel, _) in instance()) {
        let dim = pts[0].len();
        let model = KrigingModel::condition(&pts, &obs, trend, kernel.clone(), Scaling::identity(dim)).unwrap();
        for (z, y) in pts.iter().zip(&obs) {
            let p = model.predict(z).unwrap();
            prop_assert!((p.mean - y).abs() < 1e-8 * y.abs().max(1.0));
            prop_assert!(p.variance.abs() < 1e-8 * kernel.variance);
        }
    }

    #[test]
    fn adding_a_point_never_increases_variance((pts, obs, trend, kernel, seed) in instance()) {
        let dim = pts[0].len();
        let model = KrigingModel::condition(&pts, &obs, trend, kernel.clone(), Scaling::identity(dim)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 1);
        let z: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        if pts.iter().any(|p| p.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>() < 1e-4) {
            return Ok(());
        }
        let updated = model.virtual_update(&z, 0.0).unwrap();
        for _ in 0..10 {
            let w: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
            prop_assert!(updated.mse(&w) <= model.mse(&w) + 1e-9 * kernel.variance);
        }
    }

    #[test]
    fn variance_is_nonnegative_and_mean_is_affine_in_data((pts, obs, trend, kernel, seed) in instance()) {
        let dim = pts[0].len();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 2);
        let shifted: Vec<f64> = obs.iter().map(|y| 2.0 * y).collect();
        let a = KrigingModel::condition(&pts, &obs, trend, kernel.clone(), Scaling::identity(dim)).unwrap();
        let b = KrigingModel::condition(&pts, &shifted, trend, kernel, Scaling::identity(dim)).unwrap();
        for _ in 0..10 {
            let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..1.5)).collect();
            let (pa, pb) = (a.predict(&w).unwrap(), b.predict(&w).unwrap());
            prop_assert!(pa.variance >= -1e-12);
            prop_assert!((pb.mean - 2.0 * pa.mean).abs() < 1e-8 * pa.mean.abs().max(1.0));
            prop_assert!((pb.variance - pa.variance).abs() < 1e-12);
        }
    }
}
