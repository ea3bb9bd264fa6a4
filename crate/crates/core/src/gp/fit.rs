//! Maximum-likelihood estimation of the kernel parameters.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{Kernel, KernelFamily, TrendBasis};
use super::model::{KrigingModel, Scaling};
use crate::doe::Domain;
use crate::error::{check_dim, Error, Result};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub family: KernelFamily,
    pub trend: TrendBasis,
    pub starts: usize,
    /// Length-scale bounds relative to the (unit) domain width.
    pub length_scale_bounds: (f64, f64),
    /// Nugget relative to σ².
    pub nugget: f64,
    pub max_evaluations: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            family: KernelFamily::SquaredExponential,
            trend: TrendBasis::Constant,
            starts: 8,
            length_scale_bounds: (1e-2, 1e2),
            nugget: 1e-8,
            max_evaluations: 400,
            seed: 0,
        }
    }
}

/// Gaussian log-likelihood of the observations under `kernel`, with β
/// replaced by its GLS estimate. Everything is evaluated in the scaled space
/// of `scaling`.
pub fn log_likelihood(
    points: &[Vec<f64>],
    observations: &[f64],
    trend: TrendBasis,
    kernel: &Kernel,
    scaling: &Scaling,
) -> Result<f64> {
    let model = KrigingModel::condition(points, observations, trend, kernel.clone(), scaling.clone())?;
    Ok(model_log_likelihood(&model))
}

fn model_log_likelihood(model: &KrigingModel) -> f64 {
    let (chol, resid_w) = model.whitened_residual();
    let n = resid_w.len() as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln()
        + linalg::log_det_from_factor(&chol)
        + resid_w.norm_squared())
}

/// Fits a kriging model: σ² is profiled out in closed form and the
/// length-scales are searched by multi-start bounded Nelder–Mead in log
/// space. Inputs are scaled to `[0,1]^Q` with `domain`, outputs standardized.
pub fn fit_kriging(
    points: &[Vec<f64>],
    observations: &[f64],
    domain: &Domain,
    options: &FitOptions,
) -> Result<KrigingModel> {
    check_dim(points.len(), observations.len())?;
    let q = domain.dim();
    for z in points {
        check_dim(q, z.len())?;
    }
    let kt = options.trend.len(q);
    if points.len() < kt + 1 {
        return Err(Error::Argument(format!(
            "fitting needs at least {} points, got {}",
            kt + 1,
            points.len()
        )));
    }
    let scaling = Scaling::from_domain(domain).standardized(observations);
    let unit: Vec<Vec<f64>> = points.iter().map(|z| scaling.to_unit(z)).collect();
    for i in 0..unit.len() {
        for j in 0..i {
            let d: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if d <= super::model::COINCIDENCE_TOL {
                return Err(Error::DegenerateDesign(format!("design points {j} and {i} coincide")));
            }
        }
    }
    let y: Vec<f64> = observations
        .iter()
        .map(|v| (v - scaling.output_shift) / scaling.output_scale)
        .collect();

    let lo = options.length_scale_bounds.0.ln();
    let hi = options.length_scale_bounds.1.ln();
    let objective = |theta: &[f64]| -> f64 {
        profiled(&unit, &y, options, theta).map_or(f64::INFINITY, |(ll, _)| -ll)
    };

    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut failures = Vec::new();
    for s in 0..options.starts.max(1) {
        let x0: Vec<f64> = if s == 0 {
            vec![(0.3f64).ln(); q]
        } else {
            (0..q).map(|_| rng.random_range((0.05f64).ln()..(3.0f64).ln())).collect()
        };
        let (x, fx) = nelder_mead(&objective, &x0, 0.5, lo, hi, options.max_evaluations);
        if fx.is_finite() {
            if best.as_ref().is_none_or(|(bf, _)| fx < *bf) {
                best = Some((fx, x));
            }
        } else {
            failures.push(format!("start {s}: non-finite likelihood from {x0:?}"));
        }
    }
    let (_, theta) = best.ok_or_else(|| Error::Fit(failures.join("; ")))?;
    let (_, sigma2) = profiled(&unit, &y, options, &theta)
        .ok_or_else(|| Error::Fit("optimum could not be re-evaluated".into()))?;
    let kernel = Kernel::new(
        options.family,
        sigma2,
        theta.iter().map(|t| t.exp()).collect(),
        options.nugget * sigma2,
    )?;
    KrigingModel::condition(points, observations, options.trend, kernel, scaling)
}

/// Concentrated log-likelihood at log length-scales `theta` on unit-scaled
/// data, returning `(log-likelihood, σ̂²)`.
fn profiled(unit: &[Vec<f64>], y: &[f64], options: &FitOptions, theta: &[f64]) -> Option<(f64, f64)> {
    let ls: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
    let corr = Kernel::new(options.family, 1.0, ls, options.nugget).ok()?;
    let n = unit.len();
    let mut r = DMatrix::from_fn(n, n, |i, j| corr.cov(&unit[i], &unit[j]));
    linalg::symmetrize(&mut r);
    let (chol, _) = linalg::cholesky_jittered(&r, 1e-8, 1e-4).ok()?;
    let kt = options.trend.len(corr.dim());
    let f = DMatrix::from_fn(n, kt, |i, j| options.trend.eval(&unit[i])[j]);
    let lf = linalg::solve_lower_mat(&chol, &f);
    let ly = linalg::solve_lower(&chol, &DVector::from_column_slice(y));
    let resid = if kt == 0 {
        ly
    } else {
        let a = lf.transpose() * &lf;
        let tc = linalg::cholesky_lower(&a)?;
        let beta = linalg::chol_solve(&tc, &(lf.transpose() * &ly));
        &ly - &lf * beta
    };
    let sigma2 = resid.norm_squared() / n as f64;
    if !(sigma2 > 0.0) {
        return None;
    }
    let ll = -0.5
        * (n as f64 * (2.0 * std::f64::consts::PI * sigma2).ln()
            + linalg::log_det_from_factor(&chol)
            + n as f64);
    ll.is_finite().then_some((ll, sigma2))
}

/// Bounded Nelder–Mead: trial points are clamped into `[lo, hi]` per coordinate.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    lo: f64,
    hi: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let clamp = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v.clamp(lo, hi)).collect() };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let start = clamp(x0.to_vec());
    simplex.push((start.clone(), f(&start)));
    for k in 0..dim {
        let mut x = start.clone();
        x[k] = if x[k] + step <= hi { x[k] + step } else { x[k] - step };
        let x = clamp(x);
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = dim + 1;
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    };
    while evals < max_evals {
        order(&mut simplex);
        let spread = simplex[dim].1 - simplex[0].1;
        let size = simplex
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread.abs() < 1e-9 && size < 1e-6) || size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|(x, _)| x[k]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let along = |t: f64| -> Vec<f64> {
            clamp((0..dim).map(|k| centroid[k] + t * (worst.0[k] - centroid[k])).collect())
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = along(-0.5);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = along(0.5);
                let fx = f(&x);
                (x, fx)
            };
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let x = clamp(s.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect());
                    s.1 = f(&x);
                    s.0 = x;
                    evals += 1;
                }
            }
        }
    }
    order(&mut simplex);
    simplex.swap_remove(0)
}

impl KrigingModel {
    /// Cholesky factor of `K_{N,N}` and `L⁻¹(y − Fβ̂)` on the scaled outputs.
    pub(crate) fn whitened_residual(&self) -> (DMatrix<f64>, DVector<f64>) {
        let chol = self.cholesky().clone();
        let w = chol.transpose() * self.alpha_vector();
        (chol, w)
    }
}
