//! Sequential design criteria (ECD, WIMSE, MMSE), the nearest-neighbour
//! KL estimator and the simulated-annealing optimizer driving them.

mod audit;
mod ecd;
mod knn;
mod mmse;
mod sa;
mod wimse;

pub use audit::{AuditLog, AuditRecord};
pub use ecd::{ecd_score, ecd_select, snapshot_builds, EcdConfig, EcdSnapshot};
pub use knn::{knn_kl_estimate, knn_kl_independent};
pub use mmse::{max_mse_grid_point, mmse_objective, mmse_select, MmseConfig, MmseForm};
pub use sa::{simulated_annealing, SaConfig, SaOutcome, SaStep};
pub use wimse::{wimse_log_weight, wimse_log_weight_mixture, WimseWeight, wimse_score, wimse_select, WimseConfig, WimseSampler, WimseSnapshot};

use crate::gp::KrigingModel;

/// True when `z` is (numerically) one of the design points of `model`.
pub(crate) fn in_design(model: &KrigingModel, z: &[f64]) -> bool {
    let u = model.scaling().to_unit(z);
    model.points().iter().any(|p| {
        let pu = model.scaling().to_unit(p);
        pu.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= crate::gp::COINCIDENCE_TOL
    })
}

/// Model conditioned on `value` at `z`; unchanged when `z` is already a
/// design point (the process is known there).
pub(crate) fn fantasy_update(model: &KrigingModel, z: &[f64], values: &[f64]) -> crate::Result<Vec<KrigingModel>> {
    if in_design(model, z) {
        Ok(vec![model.clone(); values.len()])
    } else {
        model.virtual_update_many(z, values)
    }
}
