use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{check_dim, Error, Result};

/// Samples up to this size use an exact scan, larger ones a k-d tree.
const SCAN_LIMIT: usize = 256;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Moves exact duplicates (within `sample` and against `other`) by
/// `1e-12·scale` in a seeded random direction.
fn jitter_duplicates(sample: &mut [Vec<f64>], other: &[Vec<f64>], scale: f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(0x6b6e6e);
    let mut seen: std::collections::HashSet<Vec<u64>> = other
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    for p in sample.iter_mut() {
        while !seen.insert(p.iter().map(|v| v.to_bits()).collect()) {
            for v in p.iter_mut() {
                *v += 1e-12 * scale * rng.random_range(-1.0..1.0);
            }
        }
    }
}

fn spread(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a[0].len();
    let mut s: f64 = 0.0;
    for k in 0..d {
        let (lo, hi) = a
            .iter()
            .chain(b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
        s = s.max(hi - lo);
    }
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Nearest-neighbour distances: to the closest other point of `p` (`ρ`) and
/// to the closest point of `q` (`ν`).
fn nn_distances(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let d = p[0].len();
    if p.len().max(q.len()) <= SCAN_LIMIT {
        return Ok(p
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let rho = p
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| *l != j)
                    .map(|(_, y)| dist2(x, y))
                    .fold(f64::INFINITY, f64::min);
                let nu = q.iter().map(|y| dist2(x, y)).fold(f64::INFINITY, f64::min);
                (rho.sqrt(), nu.sqrt())
            })
            .collect());
    }
    let tree_err = |e: kdtree::ErrorKind| Error::DegenerateSample(format!("k-d tree: {e:?}"));
    let mut tp = KdTree::new(d);
    for (j, x) in p.iter().enumerate() {
        tp.add(x.as_slice(), j).map_err(tree_err)?;
    }
    let mut tq = KdTree::new(d);
    for (j, x) in q.iter().enumerate() {
        tq.add(x.as_slice(), j).map_err(tree_err)?;
    }
    p.iter()
        .enumerate()
        .map(|(j, x)| {
            let near = tp.nearest(x, 2, &squared_euclidean).map_err(tree_err)?;
            let rho = near
                .iter()
                .find(|(_, &l)| l != j)
                .map(|(d2, _)| *d2)
                .ok_or_else(|| Error::DegenerateSample("no neighbour".into()))?;
            let nu = tq.nearest(x, 1, &squared_euclidean).map_err(tree_err)?[0].0;
            Ok((rho.sqrt(), nu.sqrt()))
        })
        .collect()
}

/// `KL̂(P‖Q) = (d/L₁)Σⱼ log(νⱼ/ρⱼ) + log(L₂/(L₁−1))`, in nats.
pub fn knn_kl_estimate(sample_p: &[Vec<f64>], sample_q: &[Vec<f64>]) -> Result<f64> {
    let (l1, l2) = (sample_p.len(), sample_q.len());
    if l1 < 2 || l2 < 1 {
        return Err(Error::Argument(format!("KL estimate needs L₁ ≥ 2 and L₂ ≥ 1, got {l1}, {l2}")));
    }
    let d = sample_p[0].len();
    for x in sample_p.iter().chain(sample_q) {
        check_dim(d, x.len())?;
    }
    let scale = spread(sample_p, sample_q);
    let mut q = sample_q.to_vec();
    jitter_duplicates(&mut q, &[], scale);
    let mut p = sample_p.to_vec();
    jitter_duplicates(&mut p, &q, scale);
    let dist = nn_distances(&p, &q)?;
    let mut acc = 0.0;
    for (rho, nu) in dist {
        if !(rho > 0.0 && nu > 0.0) {
            return Err(Error::DegenerateSample("zero nearest-neighbour distance".into()));
        }
        acc += (nu / rho).ln();
    }
    Ok(d as f64 / l1 as f64 * acc + (l2 as f64 / (l1 as f64 - 1.0)).ln())
}

/// Sum of one-dimensional estimates over the coordinates (components
/// treated as independent).
pub fn knn_kl_independent(sample_p: &[Vec<f64>], sample_q: &[Vec<f64>]) -> Result<f64> {
    let d = sample_p.first().map_or(0, Vec::len);
    (0..d)
        .map(|k| {
            let pk: Vec<Vec<f64>> = sample_p.iter().map(|x| vec![x[k]]).collect();
            let qk: Vec<Vec<f64>> = sample_q.iter().map(|x| vec![x[k]]).collect();
            knn_kl_estimate(&pk, &qk)
        })
        .sum()
}
