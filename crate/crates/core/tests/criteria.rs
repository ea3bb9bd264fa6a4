mod common;

use adakrig::criteria::*;
use adakrig::doe::Domain;
use adakrig::gp::{Kernel, KrigingModel, Scaling, TrendBasis};
use adakrig::mcmc::{LikelihoodContext, ObservationSet};
use adakrig::prior::{elicit_prior, Theta};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn model_1d(pts: &[f64], length: f64) -> KrigingModel {
    let k = Kernel::squared_exponential(1.0, vec![length]).unwrap();
    let p: Vec<Vec<f64>> = pts.iter().map(|x| vec![*x]).collect();
    KrigingModel::condition(&p, pts, TrendBasis::Constant, k, Scaling::identity(1)).unwrap()
}

fn gaussian_sample(mean: &[f64], sd: &[f64], n: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            mean.iter()
                .zip(sd)
                .map(|(m, s)| m + s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect()
}

fn gaussian_kl_diag(m1: &[f64], s1: &[f64], m2: &[f64], s2: &[f64]) -> f64 {
    m1.iter()
        .zip(s1)
        .zip(m2.iter().zip(s2))
        .map(|((a, sa), (b, sb))| (sb / sa).ln() + (sa * sa + (a - b).powi(2)) / (2.0 * sb * sb) - 0.5)
        .sum()
}

#[test]
fn knn_estimator_tracks_gaussian_kl() {
    let (m1, s1, m2, s2) = ([0.0, 0.0], [1.0, 1.0], [0.5, -0.3], [1.3, 0.8]);
    let truth = gaussian_kl_diag(&m1, &s1, &m2, &s2);
    let est: Vec<f64> = (0..15)
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(100 + r);
            let p = gaussian_sample(&m1, &s1, 2000, &mut rng);
            let q = gaussian_sample(&m2, &s2, 2000, &mut rng);
            knn_kl_estimate(&p, &q).unwrap()
        })
        .collect();
    let med = common::median(est);
    assert!((med - truth).abs() < 0.1, "median {med} vs {truth}");
}

#[test]
fn knn_estimator_of_identical_laws_is_near_zero() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let p = gaussian_sample(&[1.0, 2.0, 3.0], &[0.1, 1.0, 10.0], 3000, &mut rng);
    let q = gaussian_sample(&[1.0, 2.0, 3.0], &[0.1, 1.0, 10.0], 3000, &mut rng);
    assert!(knn_kl_estimate(&p, &q).unwrap().abs() < 0.1);
}

#[test]
fn mmse_matches_grid_argmax() {
    let model = model_1d(&[0.2, 0.8], 0.3);
    let grid: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
    let values: Vec<f64> = grid.iter().map(|x| model.mse(&[*x])).collect();
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<f64> = grid.iter().zip(&values).filter(|(_, v)| **v > top * (1.0 - 1e-9)).map(|(x, _)| *x).collect();
    for seed in 0..5 {
        let out = mmse_select(
            std::slice::from_ref(&model),
            &Domain::unit(1),
            &MmseConfig::default(),
            &SaConfig::default(),
            &mut ChaCha20Rng::seed_from_u64(seed),
        )
        .unwrap();
        let dist = argmax.iter().map(|a| (a - out.best[0]).abs()).fold(f64::INFINITY, f64::min);
        assert!(dist < 5e-3, "seed {seed}: {:?} vs {argmax:?}", out.best);
        assert!(model.mse(&out.best) > 0.0);
    }
}

#[test]
fn mmse_on_symmetric_design_is_symmetric() {
    let k = Kernel::squared_exponential(1.0, vec![0.3, 0.3]).unwrap();
    let pts = vec![vec![0.3, 0.5], vec![0.7, 0.5]];
    let model = KrigingModel::condition(&pts, &[1.0, 1.0], TrendBasis::Constant, k, Scaling::identity(2)).unwrap();
    let out = mmse_select(
        std::slice::from_ref(&model),
        &Domain::unit(2),
        &MmseConfig::default(),
        &SaConfig::default(),
        &mut ChaCha20Rng::seed_from_u64(3),
    )
    .unwrap();
    // the mirror image under x1 -> 1 - x1 has the same MSE
    let mirror = [1.0 - out.best[0], out.best[1]];
    assert!((model.mse(&out.best) - model.mse(&mirror)).abs() < 1e-9);
    let corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let near = corners.iter().map(|c| ((c[0] - out.best[0]).powi(2) + (c[1] - out.best[1]).powi(2)).sqrt()).fold(f64::INFINITY, f64::min);
    assert!(near < 0.05, "{:?}", out.best);
}

fn wimse_setup() -> (Theta, LikelihoodContext, ObservationSet, KrigingModel) {
    let model = model_1d(&[0.1, 0.5, 0.9], 0.2);
    let ctx = LikelihoodContext::kriging(vec![model.clone()], Some(Domain::unit(1))).unwrap();
    let obs = ObservationSet::new(vec![vec![0.3], vec![0.35], vec![0.25]], vec![], vec![0.01]).unwrap();
    let theta = Theta::new(DVector::from_vec(vec![0.3]), DMatrix::from_element(1, 1, 0.02)).unwrap();
    (theta, ctx, obs, model)
}

/// Double-grid oracle: a fresh conditioning per candidate, the weight from
/// closed-form Gaussian terms, and a midpoint rule on a fine grid.
fn wimse_oracle(model: &KrigingModel, theta: &Theta, obs: &ObservationSet, alpha: f64, candidates: &[f64]) -> Vec<f64> {
    let fine: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
    let log_w: Vec<f64> = fine
        .iter()
        .map(|x| {
            let p = model.predict(&[*x]).unwrap();
            let v = obs.r_diag()[0] + p.variance;
            obs.y()
                .iter()
                .map(|y| -0.5 * v.ln() - 0.5 * ((x - theta.m[0]).powi(2) / theta.c[(0, 0)] + (y[0] - p.mean).powi(2) / v))
                .sum::<f64>()
        })
        .collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| ((1.0 - alpha) * (l - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    let pts = model.points();
    let vals = model.observations();
    candidates
        .iter()
        .map(|c| {
            let mut p = pts.clone();
            p.push(vec![*c]);
            let mut v = vals.clone();
            v.push(model.predict(&[*c]).unwrap().mean);
            let updated = KrigingModel::condition(&p, &v, TrendBasis::Constant, model.kernel().clone(), Scaling::identity(1)).unwrap();
            fine.iter().zip(&w).map(|(x, wi)| updated.mse(&[*x]).powf(alpha) * wi).sum::<f64>() / total
        })
        .collect()
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

#[test]
fn wimse_grid_argmin_matches_double_grid_oracle() {
    let (theta, ctx, obs, model) = wimse_setup();
    let alpha = 0.8;
    let candidates: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
    let oracle = wimse_oracle(&model, &theta, &obs, alpha, &candidates);
    let best = argmin(&oracle);
    // quadrature snapshot on the fine grid
    let fine: Vec<Vec<f64>> = (0..2000).map(|i| vec![(i as f64 + 0.5) / 2000.0]).collect();
    let lw = fine
        .iter()
        .map(|z| (1.0 - alpha) * wimse_log_weight(z, &theta, &ctx, &obs, false).unwrap())
        .collect();
    let grid_snap = WimseSnapshot { alpha, normalize: true, points: fine, log_weights: lw };
    let models = [model.clone()];
    let scores: Vec<f64> = candidates.iter().map(|c| wimse_score(&[*c], &grid_snap, &models).unwrap()).collect();
    assert!(argmin(&scores).abs_diff(best) <= 1, "{} vs {best}", argmin(&scores));
    // Monte Carlo snapshot
    let config = WimseConfig { alpha, mc_size: 20_000, ..Default::default() };
    let mc = WimseSnapshot::build(&theta, &ctx, &obs, &Domain::unit(1), &config, &mut ChaCha20Rng::seed_from_u64(11)).unwrap();
    let scores: Vec<f64> = candidates.iter().map(|c| wimse_score(&[*c], &mc, &models).unwrap()).collect();
    let got = argmin(&scores);
    assert!(oracle[got] <= oracle[best] * 1.01, "MC argmin {} ({}) vs {best} ({})", got, oracle[got], oracle[best]);
}

#[test]
fn wimse_importance_sampler_agrees_with_metropolis() {
    let (theta, ctx, obs, model) = wimse_setup();
    let models = [model];
    let dom = Domain::unit(1);
    let a = WimseConfig { mc_size: 20_000, sampler: WimseSampler::Importance, ..Default::default() };
    let b = WimseConfig { mc_size: 20_000, ..Default::default() };
    let sa = WimseSnapshot::build(&theta, &ctx, &obs, &dom, &a, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    let sb = WimseSnapshot::build(&theta, &ctx, &obs, &dom, &b, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
    for z in [0.05, 0.3, 0.7] {
        let (x, y) = (wimse_score(&[z], &sa, &models).unwrap(), wimse_score(&[z], &sb, &models).unwrap());
        assert!((x - y).abs() < 0.05 * x.max(y), "{z}: {x} vs {y}");
    }
}

#[test]
fn ecd_prefers_the_gap_over_a_design_neighbour() {
    // identity response emulated from three runs; data sit in the gap
    let model = model_1d(&[0.05, 0.6, 0.95], 0.3);
    let ctx = LikelihoodContext::kriging(vec![model], Some(Domain::unit(1))).unwrap();
    let obs = ObservationSet::new(vec![vec![0.3], vec![0.32], vec![0.27], vec![0.35], vec![0.25]], vec![], vec![1e-3]).unwrap();
    let prior = elicit_prior(DVector::from_vec(vec![0.5]), DMatrix::from_element(1, 1, 0.04), 1.0).unwrap();
    let theta = Theta::new(DVector::from_vec(vec![0.3]), DMatrix::from_element(1, 1, 0.01)).unwrap();
    let xs: Vec<DVector<f64>> = obs.y().iter().map(|y| DVector::from_vec(y.clone())).collect();
    let config = EcdConfig { fantasies: 10, l1: 300, l2: 300, ..Default::default() };
    let wins = (0..20)
        .filter(|&seed| {
            let snap = EcdSnapshot::build(&theta, &xs, &prior, &ctx, &obs, &config, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
            let gap = ecd_score(&[0.3], &snap, &ctx, &obs, &config).unwrap();
            let near = ecd_score(&[0.62], &snap, &ctx, &obs, &config).unwrap();
            gap > near
        })
        .count();
    assert!(wins >= 18, "{wins}/20");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn annealing_reports_best_so_far(seed in 0u64..1000, c0 in -2.0f64..3.0, c1 in 0.0f64..1.0, sd in 0.01f64..2.0) {
        let dom = Domain::new(vec![-2.0, 0.0], vec![3.0, 1.0]).unwrap();
        let f = |z: &[f64]| Ok((z[0] - c0).powi(2) + 3.0 * (z[1] - c1).powi(2));
        let cfg = SaConfig { iterations: 200, proposal_sd: sd, ..Default::default() };
        let out = simulated_annealing(f, &dom, &cfg, None, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        let floor = out.trace.iter().map(|s| s.value).fold(out.start_value, f64::min);
        prop_assert_eq!(out.best_value, floor);
        prop_assert!(dom.contains(&out.best));
        prop_assert!(out.trace.iter().all(|s| dom.contains(&s.candidate)));
        prop_assert_eq!(out.accepted, out.trace.iter().filter(|s| s.accepted).count());
    }
}

#[test]
fn toy_weight_peaks_in_the_data_region() {
    use adakrig::experiment::{Experiment, ExperimentConfig};
    use adakrig::forward::RunCounter;
    let exp = Experiment::new(ExperimentConfig::default()).unwrap();
    let counter = RunCounter::new(10);
    let design = exp.initial_design(&counter).unwrap();
    let models = exp.fit(&design).unwrap();
    let ctx = exp.context(models).unwrap();
    let (theta, _) = exp.truth.clone().unwrap();
    let grid: Vec<Vec<f64>> = (0..2500).map(|i| vec![((i % 50) as f64 + 0.5) / 50.0, ((i / 50) as f64 + 0.5) / 50.0]).collect();
    for weight in [WimseWeight::Product, WimseWeight::Mixture] {
        let best = grid
            .iter()
            .max_by(|a, b| {
                let wa = weight.log_weight(a, &theta, &ctx, &exp.observations, false).unwrap();
                let wb = weight.log_weight(b, &theta, &ctx, &exp.observations, false).unwrap();
                wa.total_cmp(&wb)
            })
            .unwrap();
        // Mahalanobis radius under the generating law; 99% for 2 dof is 9.21
        let r = DVector::from_column_slice(best) - &theta.m;
        let d2 = (r.transpose() * theta.c.clone().try_inverse().unwrap() * &r)[(0, 0)];
        assert!(d2 < 9.21, "{weight:?}: argmax {best:?}, squared radius {d2:.2}");
    }
}
