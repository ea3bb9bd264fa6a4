//! Kriging metamodel: kernels, GLS trend, universal-kriging prediction and
//! covariance, conditional simulation, fantasy updates and leave-one-out Q2.
//!
//! Each output component of a vector-valued forward model is kriged
//! independently; the block assembly across components lives in
//! [`crate::mcmc`].

mod fit;
mod kernel;
mod model;
mod q2;

pub use fit::{fit_kriging, log_likelihood, FitOptions};
pub use kernel::{Kernel, KernelFamily, TrendBasis};
pub use model::{gls_beta, KrigingModel, KrigingModelDoc, Prediction, Scaling, COINCIDENCE_TOL};
pub use q2::{q2_from_predictions, q2_loocv, q2_of_models};

/// Fits one independent kriging model per output column of `outputs`
/// (`outputs[i][j]` is component `j` at point `i`).
pub fn fit_components(
    points: &[Vec<f64>],
    outputs: &[Vec<f64>],
    domain: &crate::doe::Domain,
    options: &FitOptions,
) -> crate::Result<Vec<KrigingModel>> {
    let p = outputs.first().map_or(0, Vec::len);
    (0..p)
        .map(|j| {
            let col: Vec<f64> = outputs.iter().map(|h| h[j]).collect();
            let opts = FitOptions {
                seed: options.seed.wrapping_add(j as u64),
                ..options.clone()
            };
            fit_kriging(points, &col, domain, &opts)
        })
        .collect()
}

/// Re-conditions existing models on a new design with their kernels kept.
pub fn recondition_components(
    models: &[KrigingModel],
    points: &[Vec<f64>],
    outputs: &[Vec<f64>],
) -> crate::Result<Vec<KrigingModel>> {
    models
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let col: Vec<f64> = outputs.iter().map(|h| h[j]).collect();
            let scaling = m.scaling().clone();
            KrigingModel::condition(points, &col, m.trend(), m.kernel().clone(), scaling)
        })
        .collect()
}
