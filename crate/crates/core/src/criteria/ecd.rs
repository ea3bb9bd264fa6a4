use std::cell::Cell;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fantasy_update;
use super::knn::{knn_kl_estimate, knn_kl_independent};
use super::sa::{simulated_annealing, SaConfig, SaOutcome};
use crate::doe::Domain;
use crate::error::{Error, Result};
use crate::mcmc::{mh_sweep, LikelihoodContext, ObservationSet};
use crate::mcmc::stream_rng;
use crate::prior::{NiwPosterior, PriorHyper, Theta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcdConfig {
    /// Number of fantasy values `M` per candidate.
    pub fantasies: usize,
    /// Posterior draws per fantasy.
    pub l1: usize,
    /// Reference posterior draws.
    pub l2: usize,
    /// Sum of per-component KL divergences instead of the joint estimate.
    pub independence: bool,
    /// MH transitions per missing value in the refresh sweep.
    pub mh_steps: usize,
}

impl Default for EcdConfig {
    fn default() -> Self {
        EcdConfig {
            fantasies: 100,
            l1: 1000,
            l2: 1000,
            independence: false,
            mh_steps: 20,
        }
    }
}

impl EcdConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ecd.fantasies", self.fantasies),
            ("ecd.l1", self.l1),
            ("ecd.l2", self.l2),
            ("ecd.mh_steps", self.mh_steps),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.l1 < 2 || self.l2 < 2 {
            return Err(Error::config("ecd.l1", "posterior samples need at least two draws"));
        }
        Ok(())
    }
}

thread_local! {
    static BUILDS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`EcdSnapshot`]s built on the current thread.
pub fn snapshot_builds() -> usize {
    BUILDS.with(|b| b.get())
}

/// Quantities shared by every candidate of one selection: the current
/// `θ` and `X`, the refreshed `X^{(r+1)}`, the reference sample `Υ` and the
/// seeds reused for every fantasy.
#[derive(Clone, Debug)]
pub struct EcdSnapshot {
    pub theta: Theta,
    pub x_start: Vec<DVector<f64>>,
    pub x_next: Vec<DVector<f64>>,
    pub reference: Vec<Vec<f64>>,
    prior: PriorHyper,
    sweep_seed: u64,
    score_seed: u64,
}

impl EcdSnapshot {
    pub fn build<R: Rng + ?Sized>(
        theta: &Theta,
        x_start: &[DVector<f64>],
        prior: &PriorHyper,
        ctx: &LikelihoodContext,
        obs: &ObservationSet,
        config: &EcdConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let sweep_seed: u64 = rng.random();
        let score_seed: u64 = rng.random();
        let mut x_next = x_start.to_vec();
        mh_sweep(&mut x_next, theta, ctx, obs, config.mh_steps, &mut stream_rng(sweep_seed, 0))?;
        let reference = posterior_sample(prior, &x_next, config.l2, &mut stream_rng(sweep_seed, 1))?;
        BUILDS.with(|b| b.set(b.get() + 1));
        Ok(EcdSnapshot {
            theta: theta.clone(),
            x_start: x_start.to_vec(),
            x_next,
            reference,
            prior: prior.clone(),
            sweep_seed,
            score_seed,
        })
    }
}

/// `L` exact draws of `(m, diag C)` from `θ | X`.
fn posterior_sample<R: Rng + ?Sized>(
    prior: &PriorHyper,
    xs: &[DVector<f64>],
    l: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let post = NiwPosterior::from_data(prior, xs);
    (0..l).map(|_| Ok(post.sample(rng)?.mean_and_variances())).collect()
}

/// Expected KL divergence between the posterior after a fantasy evaluation
/// at `z` and the current posterior, averaged over `M` fantasy values. The
/// same seeds are used for every `z`, so the score is a deterministic
/// function of `z` for a given snapshot.
pub fn ecd_score(
    z: &[f64],
    snapshot: &EcdSnapshot,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    config: &EcdConfig,
) -> Result<f64> {
    let models = ctx
        .models()
        .ok_or_else(|| Error::Argument("ECD needs a kriging emulator".into()))?;
    let m = config.fantasies;
    let mut fantasy_rng = stream_rng(snapshot.score_seed, 0);
    let mut per_output = Vec::with_capacity(models.len());
    for model in models {
        let draws: Vec<f64> = (0..m)
            .map(|_| Ok(model.conditional_sample(&[z.to_vec()], &mut fantasy_rng)?[0]))
            .collect::<Result<_>>()?;
        per_output.push(fantasy_update(model, z, &draws)?);
    }
    let divergences = (0..m)
        .into_par_iter()
        .map(|i| {
            let updated = per_output.iter().map(|f| f[i].clone()).collect();
            let ctx_i = ctx.with_models(updated)?;
            let mut xs = snapshot.x_start.clone();
            mh_sweep(
                &mut xs,
                &snapshot.theta,
                &ctx_i,
                obs,
                config.mh_steps,
                &mut stream_rng(snapshot.sweep_seed, 0),
            )?;
            let sample = posterior_sample(
                &snapshot.prior,
                &xs,
                config.l1,
                &mut stream_rng(snapshot.score_seed, 1 + i as u64),
            )?;
            if config.independence {
                knn_kl_independent(&sample, &snapshot.reference)
            } else {
                knn_kl_estimate(&sample, &snapshot.reference)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(divergences.iter().sum::<f64>() / m as f64)
}

/// Next design point: annealing maximization of [`ecd_score`]. Fails with a
/// budget error when the design already holds `max_design` points.
#[allow(clippy::too_many_arguments)]
pub fn ecd_select<R: Rng + ?Sized>(
    snapshot: &EcdSnapshot,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    config: &EcdConfig,
    domain: &Domain,
    sa: &SaConfig,
    design_size: usize,
    max_design: usize,
    start: Option<Vec<f64>>,
    rng: &mut R,
) -> Result<SaOutcome> {
    if design_size >= max_design {
        return Err(Error::Budget {
            used: design_size,
            max: max_design,
            requested: 1,
        });
    }
    let mut outcome = simulated_annealing(|z| Ok(-ecd_score(z, snapshot, ctx, obs, config)?), domain, sa, start, rng)?;
    outcome.best_value = -outcome.best_value;
    outcome.start_value = -outcome.start_value;
    for step in &mut outcome.trace {
        step.value = -step.value;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Kernel, KrigingModel, Scaling, TrendBasis};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (Theta, Vec<DVector<f64>>, PriorHyper, LikelihoodContext, ObservationSet) {
        let k = Kernel::squared_exponential(1.0, vec![0.3]).unwrap();
        let pts = vec![vec![0.05], vec![0.5], vec![0.95]];
        let vals: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let model = KrigingModel::condition(&pts, &vals, TrendBasis::Constant, k, Scaling::identity(1)).unwrap();
        let ctx = LikelihoodContext::kriging(vec![model], Some(Domain::unit(1))).unwrap();
        let obs = ObservationSet::new(vec![vec![0.3], vec![0.32], vec![0.27], vec![0.35]], vec![], vec![1e-3]).unwrap();
        let prior = crate::prior::elicit_prior(DVector::from_vec(vec![0.5]), DMatrix::from_element(1, 1, 0.04), 1.0).unwrap();
        let theta = Theta::new(DVector::from_vec(vec![0.3]), DMatrix::from_element(1, 1, 0.01)).unwrap();
        let xs = obs.y().iter().map(|y| DVector::from_vec(y.clone())).collect();
        (theta, xs, prior, ctx, obs)
    }

    fn config() -> EcdConfig {
        EcdConfig {
            fantasies: 6,
            l1: 200,
            l2: 200,
            ..Default::default()
        }
    }

    #[test]
    fn scores_are_deterministic_per_snapshot() {
        let (theta, xs, prior, ctx, obs) = setup();
        let cfg = config();
        let before = snapshot_builds();
        let snap = EcdSnapshot::build(&theta, &xs, &prior, &ctx, &obs, &cfg, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        assert_eq!(snapshot_builds(), before + 1);
        let a = ecd_score(&[0.3], &snap, &ctx, &obs, &cfg).unwrap();
        let b = ecd_score(&[0.3], &snap, &ctx, &obs, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite());
        assert_eq!(snapshot_builds(), before + 1);
    }

    #[test]
    fn design_point_has_no_information() {
        let (theta, xs, prior, ctx, obs) = setup();
        let cfg = config();
        let snap = EcdSnapshot::build(&theta, &xs, &prior, &ctx, &obs, &cfg, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        let at_design = ecd_score(&[0.5], &snap, &ctx, &obs, &cfg).unwrap();
        let informative = ecd_score(&[0.3], &snap, &ctx, &obs, &cfg).unwrap();
        assert!(at_design < informative, "{at_design} vs {informative}");
    }

    #[test]
    fn full_design_is_a_budget_error() {
        let (theta, xs, prior, ctx, obs) = setup();
        let cfg = config();
        let snap = EcdSnapshot::build(&theta, &xs, &prior, &ctx, &obs, &cfg, &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        let err = ecd_select(
            &snap,
            &ctx,
            &obs,
            &cfg,
            &Domain::unit(1),
            &SaConfig::default(),
            5,
            5,
            None,
            &mut ChaCha20Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }
}
