use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::doe::Domain;
use crate::error::{Error, Result};

/// Simulated-annealing settings. `proposal_sd` is measured on the domain
/// scaled to the unit hypercube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaConfig {
    pub initial_temperature: f64,
    pub proposal_sd: f64,
    pub iterations: usize,
    pub decay: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            initial_temperature: 100.0,
            proposal_sd: 100.0,
            iterations: 1000,
            decay: 0.99,
        }
    }
}

impl SaConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("{prefix}.{f}"), m));
        if !(self.initial_temperature > 0.0) {
            return bad("initial_temperature", "must be > 0");
        }
        if !(self.proposal_sd > 0.0) {
            return bad("proposal_sd", "must be > 0");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay", "must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaStep {
    pub candidate: Vec<f64>,
    pub value: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct SaOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub start: Vec<f64>,
    pub start_value: f64,
    pub accepted: usize,
    pub trace: Vec<SaStep>,
}

/// Folds `u` back into `[0, 1]` (reflection at both ends).
fn reflect(u: f64) -> f64 {
    let r = u.rem_euclid(2.0);
    if r > 1.0 {
        2.0 - r
    } else {
        r
    }
}

/// Minimizes `objective` over `domain`. Proposals are Gaussian random-walk
/// steps reflected at the boundary; a move is accepted with probability
/// `min(1, exp((f(z) − f(z̃))/β))` and `β ← decay·β` after each step. The
/// best point visited is returned.
pub fn simulated_annealing<R: Rng + ?Sized>(
    mut objective: impl FnMut(&[f64]) -> Result<f64>,
    domain: &Domain,
    config: &SaConfig,
    start: Option<Vec<f64>>,
    rng: &mut R,
) -> Result<SaOutcome> {
    config.validate("sa")?;
    let start = match start {
        Some(s) if domain.contains(&s) => s,
        Some(s) => return Err(Error::OutsideDomain { point: s }),
        None => domain.from_unit(&vec![0.5; domain.dim()]),
    };
    let start_value = objective(&start)?;
    let mut current = domain.to_unit(&start);
    let mut current_value = start_value;
    let mut best = start.clone();
    let mut best_value = start_value;
    let mut beta = config.initial_temperature;
    let mut accepted = 0;
    let mut trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let cand_unit: Vec<f64> = current
            .iter()
            .map(|u| {
                let e: f64 = rng.sample(StandardNormal);
                reflect(u + config.proposal_sd * e)
            })
            .collect();
        let cand = domain.from_unit(&cand_unit);
        let value = objective(&cand)?;
        let u: f64 = rng.random();
        let ok = if value.is_nan() {
            false
        } else {
            value <= current_value || u < ((current_value - value) / beta).exp()
        };
        if ok {
            current = cand_unit;
            current_value = value;
            accepted += 1;
            if value < best_value {
                best_value = value;
                best = cand.clone();
            }
        }
        trace.push(SaStep {
            candidate: cand,
            value,
            accepted: ok,
        });
        beta *= config.decay;
    }
    Ok(SaOutcome {
        best,
        best_value,
        start,
        start_value,
        accepted,
        trace,
    })
}
