use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fantasy_update;
use super::sa::{simulated_annealing, SaConfig, SaOutcome};
use crate::doe::Domain;
use crate::error::{Error, Result};
use crate::gp::KrigingModel;
use crate::linalg;
use crate::mcmc::{LikelihoodContext, ObservationSet};
use crate::prior::Theta;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WimseConfig {
    pub alpha: f64,
    /// Number of Monte Carlo integration points.
    pub mc_size: usize,
    /// Integrate against the normalized density `w^{1−α}/∫w^{1−α}`.
    pub normalize: bool,
    /// Subtract the data quadratic in `Δᵢ` instead of adding it.
    pub negated_data_term: bool,
    /// Share of integration points drawn from `N(m, C)` restricted to the
    /// domain; the rest are uniform on the domain.
    pub gaussian_share: f64,
    pub sampler: WimseSampler,
    pub weight: WimseWeight,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WimseWeight {
    /// ∏ᵢ π(x, d | yᵢ, θ)
    #[default]
    Product,
    /// (1/n) Σᵢ π(x, d | yᵢ, θ)
    Mixture,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WimseSampler {
    /// Points from a defensive mixture, weighted by w^{1-α}/g.
    Importance,
    /// Equally weighted points from random-walk chains targeting w^{1-α} on Ω.
    #[default]
    Metropolis,
}

impl Default for WimseConfig {
    fn default() -> Self {
        WimseConfig {
            alpha: 0.8,
            mc_size: 1000,
            normalize: true,
            negated_data_term: false,
            gaussian_share: 0.5,
            sampler: WimseSampler::default(),
            weight: WimseWeight::default(),
        }
    }
}

impl WimseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("wimse.alpha", "must lie in [0, 1]"));
        }
        if self.mc_size == 0 {
            return Err(Error::config("wimse.mc_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gaussian_share) {
            return Err(Error::config("wimse.gaussian_share", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `log w(z) = Σᵢ [−½log|𝐑+MSE(x,d)| − ½Δᵢ]` with
/// `Δᵢ = (x−m)ᵀC⁻¹(x−m) + (yᵢ−Ĥ(x,d))ᵀ(𝐑+MSE(x,d))⁻¹(yᵢ−Ĥ(x,d))`
/// (the second term subtracted when `literal` is set).
pub fn wimse_log_weight(
    z: &[f64],
    theta: &Theta,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    literal: bool,
) -> Result<f64> {
    Ok(observation_terms(z, theta, ctx, obs, literal)?.iter().sum())
}

pub fn wimse_log_weight_mixture(
    z: &[f64],
    theta: &Theta,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    literal: bool,
) -> Result<f64> {
    let terms = observation_terms(z, theta, ctx, obs, literal)?;
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    Ok(top + sum.ln() - (terms.len() as f64).ln())
}

fn observation_terms(
    z: &[f64],
    theta: &Theta,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    literal: bool,
) -> Result<Vec<f64>> {
    let q = theta.dim();
    let l = linalg::cholesky_lower(&theta.c).ok_or_else(|| Error::Numerical("C is not positive definite".into()))?;
    let r = DVector::from_column_slice(&z[..q]) - &theta.m;
    let prior_q = linalg::solve_lower(&l, &r).norm_squared();
    let (mean, mse) = ctx.predict(z)?;
    let var: Vec<f64> = obs.r_diag().iter().zip(&mse).map(|(r, m)| r + m).collect();
    let log_det: f64 = var.iter().map(|v| v.ln()).sum();
    let sign = if literal { -1.0 } else { 1.0 };
    Ok(obs
        .y()
        .iter()
        .map(|yi| {
            let data_q: f64 = yi.iter().zip(&mean).zip(&var).map(|((y, h), v)| (y - h).powi(2) / v).sum();
            -0.5 * log_det - 0.5 * (prior_q + sign * data_q)
        })
        .collect())
}

impl WimseWeight {
    pub fn log_weight(
        self,
        z: &[f64],
        theta: &Theta,
        ctx: &LikelihoodContext,
        obs: &ObservationSet,
        literal: bool,
    ) -> Result<f64> {
        match self {
            WimseWeight::Product => wimse_log_weight(z, theta, ctx, obs, literal),
            WimseWeight::Mixture => wimse_log_weight_mixture(z, theta, ctx, obs, literal),
        }
    }
}

#[derive(Clone, Debug)]
pub struct WimseSnapshot {
    pub alpha: f64,
    pub normalize: bool,
    pub points: Vec<Vec<f64>>,
    /// `(1−α)·log w(z_k) − log g(z_k)` for the proposal density `g`.
    pub log_weights: Vec<f64>,
}

const TRUNCATION_TRIES: usize = 1000;
const CHAINS: usize = 4;
const POOL: usize = 500;
const BURN_IN: usize = 300;
const THIN: usize = 3;

impl WimseSnapshot {
    pub fn build<R: Rng + ?Sized>(
        theta: &Theta,
        ctx: &LikelihoodContext,
        obs: &ObservationSet,
        domain: &Domain,
        config: &WimseConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        match config.sampler {
            WimseSampler::Importance => Self::importance(theta, ctx, obs, domain, config, rng),
            WimseSampler::Metropolis => Self::metropolis(theta, ctx, obs, domain, config, rng),
        }
    }

    fn metropolis<R: Rng + ?Sized>(
        theta: &Theta,
        ctx: &LikelihoodContext,
        obs: &ObservationSet,
        domain: &Domain,
        config: &WimseConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let n = config.mc_size;
        let tempered = |u: &[f64]| -> Result<f64> {
            let lw = config.weight.log_weight(&domain.from_unit(u), theta, ctx, obs, config.negated_data_term)?;
            Ok((1.0 - config.alpha) * lw)
        };
        let mut units: Vec<Vec<f64>> = Vec::with_capacity(n);
        if config.alpha == 1.0 {
            // flat target: the uniform law on Ω
            units.extend((0..n).map(|_| (0..domain.dim()).map(|_| rng.random::<f64>()).collect::<Vec<f64>>()));
        } else {
            let pool: Vec<Vec<f64>> = (0..POOL).map(|_| (0..domain.dim()).map(|_| rng.random::<f64>()).collect()).collect();
            let pool_lw = pool.par_iter().map(|u| tempered(u)).collect::<Result<Vec<f64>>>()?;
            let mut order: Vec<usize> = (0..POOL).collect();
            order.sort_by(|&a, &b| pool_lw[b].total_cmp(&pool_lw[a]));
            for c in 0..CHAINS {
                let draws = n / CHAINS + usize::from(c < n % CHAINS);
                let (mut u, mut lu) = (pool[order[c]].clone(), pool_lw[order[c]]);
                let mut sd = 0.1;
                let mut accepted = 0usize;
                for step in 0..BURN_IN + draws * THIN {
                    let prop: Vec<f64> = u
                        .iter()
                        .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let inside = prop.iter().all(|v| (0.0..=1.0).contains(v));
                    let lp = if inside { tempered(&prop)? } else { f64::NEG_INFINITY };
                    if lp.is_finite() && rng.random::<f64>().ln() < lp - lu {
                        u = prop;
                        lu = lp;
                        accepted += 1;
                    }
                    if step < BURN_IN && (step + 1) % 50 == 0 {
                        // steer the acceptance rate towards 0.3
                        sd = (sd * (accepted as f64 / 50.0 - 0.3).exp()).clamp(1e-4, 0.5);
                        accepted = 0;
                    }
                    if step >= BURN_IN && (step - BURN_IN + 1) % THIN == 0 {
                        units.push(u.clone());
                    }
                }
            }
        }
        Ok(WimseSnapshot {
            alpha: config.alpha,
            normalize: config.normalize,
            points: units.iter().map(|u| domain.from_unit(u)).collect(),
            log_weights: vec![0.0; n],
        })
    }

    fn importance<R: Rng + ?Sized>(
        theta: &Theta,
        ctx: &LikelihoodContext,
        obs: &ObservationSet,
        domain: &Domain,
        config: &WimseConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let q = theta.dim();
        let x_dom = domain.slice(0..q)?;
        let d_dom = (domain.dim() > q).then(|| domain.slice(q..domain.dim())).transpose()?;
        let l = linalg::cholesky_lower(&theta.c).ok_or_else(|| Error::Numerical("C is not positive definite".into()))?;

        // mass of N(m, C) inside the x-domain
        let mass_draws = 4000;
        let inside = (0..mass_draws)
            .filter(|_| x_dom.contains(linalg::sample_gaussian(&theta.m, &l, rng).as_slice()))
            .count();
        let mass = inside as f64 / mass_draws as f64;
        let share = if mass > 0.0 { config.gaussian_share } else { 0.0 };
        let log_norm = -0.5 * q as f64 * (2.0 * std::f64::consts::PI).ln() - linalg::log_det_from_factor(&l) / 2.0;
        let log_vol_d = d_dom.as_ref().map_or(0.0, |d| d.volume().ln());

        let mut points = Vec::with_capacity(config.mc_size);
        for _ in 0..config.mc_size {
            let x = if rng.random::<f64>() < share {
                (0..TRUNCATION_TRIES)
                    .map(|_| linalg::sample_gaussian(&theta.m, &l, rng))
                    .find(|x| x_dom.contains(x.as_slice()))
                    .map(|x| x.iter().copied().collect())
                    .unwrap_or_else(|| x_dom.sample_uniform(rng))
            } else {
                x_dom.sample_uniform(rng)
            };
            let d = d_dom.as_ref().map(|d| d.sample_uniform(rng)).unwrap_or_default();
            points.push(x.into_iter().chain(d).collect::<Vec<f64>>());
        }
        let log_weights = points
            .par_iter()
            .map(|z| {
                let r = DVector::from_column_slice(&z[..q]) - &theta.m;
                let log_phi = log_norm - 0.5 * linalg::solve_lower(&l, &r).norm_squared();
                let g = (1.0 - share) / x_dom.volume() + if share > 0.0 { share * log_phi.exp() / mass } else { 0.0 };
                let log_g = g.ln() - log_vol_d;
                let tempered = if config.alpha == 1.0 {
                    0.0
                } else {
                    (1.0 - config.alpha) * config.weight.log_weight(z, theta, ctx, obs, config.negated_data_term)?
                };
                Ok(tempered - log_g)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(WimseSnapshot {
            alpha: config.alpha,
            normalize: config.normalize,
            points,
            log_weights,
        })
    }
}

/// Monte Carlo estimate of `∫ MSE^α(z | D_N ∪ {z*}) w̃^{1−α}(z) dz`, with the
/// MSE after a fantasy update at `z*` (value-independent, so the predicted
/// mean is used) summed over output components.
pub fn wimse_score(z_star: &[f64], snapshot: &WimseSnapshot, models: &[KrigingModel]) -> Result<f64> {
    let updated = models
        .iter()
        .map(|m| {
            let mean = m.predict(z_star)?.mean;
            Ok(fantasy_update(m, z_star, &[mean])?.remove(0))
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha = snapshot.alpha;
    let values: Vec<f64> = snapshot
        .points
        .par_iter()
        .map(|z| {
            if alpha == 0.0 {
                1.0
            } else {
                updated.iter().map(|m| m.mse(z)).sum::<f64>().powf(alpha)
            }
        })
        .collect();
    let lw = &snapshot.log_weights;
    if snapshot.normalize {
        let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::DegenerateWeight);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (v, l) in values.iter().zip(lw) {
            let w = (l - top).exp();
            num += w * v;
            den += w;
        }
        Ok(num / den)
    } else {
        let sum: f64 = values.iter().zip(lw).map(|(v, l)| v * l.exp()).sum();
        if !(sum.is_finite()) {
            return Err(Error::DegenerateWeight);
        }
        Ok(sum / values.len() as f64)
    }
}

/// Next design point: annealing minimization of [`wimse_score`].
pub fn wimse_select<R: Rng + ?Sized>(
    snapshot: &WimseSnapshot,
    models: &[KrigingModel],
    domain: &Domain,
    sa: &SaConfig,
    start: Option<Vec<f64>>,
    rng: &mut R,
) -> Result<SaOutcome> {
    simulated_annealing(|z| wimse_score(z, snapshot, models), domain, sa, start, rng)
}
