#![allow(dead_code)]

use adakrig::gp::{Kernel, TrendBasis};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Universal-kriging mean at `a` and covariance between `a` and `b`, from
/// the bordered system `[K F; Fᵀ 0][λ; μ] = [k; f]` solved by LU. With no
/// trend this is plain joint-Gaussian conditioning.
pub fn bordered_oracle(
    pts: &[Vec<f64>],
    obs: &[f64],
    trend: TrendBasis,
    kernel: &Kernel,
    a: &[f64],
    b: &[f64],
) -> (f64, f64) {
    let n = pts.len();
    let kt = trend.len(a.len());
    let m = n + kt;
    let mut sys = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            sys[(i, j)] = kernel.eval(&pts[i], &pts[j]).unwrap();
        }
        let f = trend.eval(&pts[i]);
        for t in 0..kt {
            sys[(i, n + t)] = f[t];
            sys[(n + t, i)] = f[t];
        }
    }
    let rhs = |z: &[f64]| {
        let f = trend.eval(z);
        DVector::from_iterator(m, (0..n).map(|i| kernel.eval(&pts[i], z).unwrap()).chain(f))
    };
    let lu = sys.lu();
    let sol_a = lu.solve(&rhs(a)).expect("bordered system is regular");
    let r_b = rhs(b);
    let mean: f64 = (0..n).map(|i| sol_a[i] * obs[i]).sum();
    let cov = kernel.eval(a, b).unwrap() - sol_a.dot(&r_b);
    (mean, cov)
}

/// `count` points in `[0,1]^dim` at mutual distance ≥ `min_dist`.
pub fn spread_points<R: Rng>(count: usize, dim: usize, min_dist: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    while pts.len() < count {
        let z: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let far = pts
            .iter()
            .all(|p| p.iter().zip(&z).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt() >= min_dist);
        if far {
            pts.push(z);
        }
    }
    pts
}

/// Batch-means standard error of the mean of a correlated series.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
