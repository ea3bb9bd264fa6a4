use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::brooks_gelman_multi;
use super::gibbs::{gibbs_step_with, initial_state, stream_rng, ChainState};
use super::likelihood::{LikelihoodContext, ObservationSet};
use crate::doe::{csv_io, format_float};
use crate::error::{Error, Result};
use crate::prior::{PriorHyper, Theta};

/// Schedule of the parallel chains and of the `R̂` stopping rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub max_iterations: usize,
    pub check_every: usize,
    pub rhat_threshold: f64,
    /// Consecutive iterations with `R̂` below the threshold that end burn-in.
    pub stable_iterations: usize,
    pub thin: usize,
    pub seed: u64,
    /// All chains share one random stream (diagnostic use).
    pub identical_streams: bool,
    pub cross_covariance: bool,
    /// Independent MH transitions per missing value and Gibbs iteration.
    pub mh_steps: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 3,
            max_iterations: 20_000,
            check_every: 50,
            rhat_threshold: 1.05,
            stable_iterations: 3000,
            thin: 1,
            seed: 0,
            identical_streams: false,
            cross_covariance: false,
            mh_steps: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("mcmc.{field}"), msg));
        if self.chains < 2 {
            return bad("chains", "at least two chains are required");
        }
        if self.check_every == 0 {
            return bad("check_every", "must be positive");
        }
        if self.mh_steps == 0 {
            return bad("mh_steps", "must be positive");
        }
        if self.thin == 0 {
            return bad("thin", "must be positive");
        }
        if !(self.rhat_threshold > 1.0) {
            return bad("rhat_threshold", "must exceed 1");
        }
        if self.max_iterations < 2 * self.check_every.max(10) {
            return bad("max_iterations", "too small for one convergence check");
        }
        Ok(())
    }

    /// Random stream of chain `c`.
    pub fn chain_rng(&self, c: usize) -> ChaCha20Rng {
        stream_rng(self.seed, if self.identical_streams { 0 } else { c as u64 + 1 })
    }
}

/// One pooled posterior draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaDraw {
    pub chain: usize,
    pub iteration: usize,
    pub theta: Theta,
}

#[derive(Clone, Debug)]
pub struct ChainRun {
    pub draws: Vec<ThetaDraw>,
    /// `(iteration, R̂)` at every check.
    pub rhat_history: Vec<(usize, f64)>,
    pub converged: bool,
    /// Chains are bitwise identical, so `R̂` carries no information.
    pub degenerate: bool,
    pub burn_in: usize,
    pub iterations: usize,
    pub acceptance_rates: Vec<f64>,
    pub states: Vec<ChainState>,
}

/// Runs `config.chains` chains from prior draws until the `R̂` rule is met
/// or `max_iterations` is reached.
pub fn run_chain(
    config: &McmcConfig,
    prior: &PriorHyper,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
) -> Result<ChainRun> {
    config.validate()?;
    let states = (0..config.chains)
        .map(|c| initial_state(prior, ctx, obs.n(), config.chain_rng(c)))
        .collect::<Result<Vec<_>>>()?;
    run_chain_from(config, states, prior, ctx, obs)
}

/// Advances every chain by `iterations` Gibbs steps in parallel.
pub(crate) fn advance(
    states: &mut [ChainState],
    iterations: usize,
    mh_steps: usize,
    prior: &PriorHyper,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    mut record: Option<&mut [Vec<Vec<f64>>]>,
) -> Result<()> {
    let traces: Vec<Result<Vec<Vec<f64>>>> = states
        .par_iter_mut()
        .map(|s| {
            let mut trace = Vec::with_capacity(iterations);
            for _ in 0..iterations {
                gibbs_step_with(s, prior, ctx, obs, mh_steps)?;
                trace.push(s.theta.to_flat());
            }
            Ok(trace)
        })
        .collect();
    for (c, t) in traces.into_iter().enumerate() {
        let t = t?;
        if let Some(rec) = record.as_deref_mut() {
            rec[c].extend(t);
        }
    }
    Ok(())
}

/// Like [`run_chain`], continuing from existing states. Iterations are
/// counted from the start of this call.
pub fn run_chain_from(
    config: &McmcConfig,
    mut states: Vec<ChainState>,
    prior: &PriorHyper,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
) -> Result<ChainRun> {
    config.validate()?;
    let ctx = &ctx.clone().with_cross_covariance(config.cross_covariance || ctx.cross_covariance());
    let q = prior.dim();
    let mut traces: Vec<Vec<Vec<f64>>> = vec![Vec::new(); states.len()];
    let mut history = Vec::new();
    let mut streak_start: Option<usize> = None;
    let mut degenerate = false;
    let mut t = 0;
    let mut converged = false;
    while t < config.max_iterations {
        let step = config.check_every.min(config.max_iterations - t);
        advance(&mut states, step, config.mh_steps, prior, ctx, obs, Some(&mut traces))?;
        t += step;
        if t < 20 {
            continue;
        }
        let half: Vec<Vec<Vec<f64>>> = traces.iter().map(|c| c[t / 2..].to_vec()).collect();
        degenerate = half.iter().all(|c| c == &half[0]);
        let rhat = if degenerate {
            1.0
        } else {
            match brooks_gelman_multi(&half) {
                Ok(r) => r,
                Err(Error::DegenerateDiagnostic(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            }
        };
        history.push((t, rhat));
        if degenerate {
            break;
        }
        if rhat < config.rhat_threshold {
            let start = *streak_start.get_or_insert(t);
            if t - start >= config.stable_iterations {
                converged = true;
                break;
            }
        } else {
            streak_start = None;
        }
    }
    let burn_in = match (converged, streak_start) {
        (true, Some(s)) => s,
        _ => t / 2,
    };
    let mut draws = Vec::new();
    for (c, trace) in traces.iter().enumerate() {
        for (k, flat) in trace.iter().enumerate().skip(burn_in) {
            let iteration = k + 1;
            if (iteration - burn_in) % config.thin == 0 {
                draws.push(ThetaDraw {
                    chain: c,
                    iteration,
                    theta: Theta::from_flat(q, flat)?,
                });
            }
        }
    }
    Ok(ChainRun {
        draws,
        rhat_history: history,
        converged,
        degenerate,
        burn_in,
        iterations: t,
        acceptance_rates: states.iter().map(ChainState::acceptance_rate).collect(),
        states,
    })
}

fn posterior_header(q: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=q).map(|k| format!("m{k}")).collect();
    for i in 1..=q {
        for j in i..=q {
            h.push(format!("C{i}{j}"));
        }
    }
    h.push("iteration".into());
    h.push("chain".into());
    h
}

/// Columns `m1..mq`, upper triangle `C11, C12, …, Cqq`, `iteration`, `chain`.
pub fn write_posterior_csv(path: &Path, q: usize, draws: &[ThetaDraw]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(posterior_header(q)).map_err(|e| csv_io(path, e))?;
    for d in draws {
        let mut row: Vec<String> = d.theta.to_flat().into_iter().map(format_float).collect();
        row.push(d.iteration.to_string());
        row.push(d.chain.to_string());
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_posterior_csv(path: &Path) -> Result<(usize, Vec<ThetaDraw>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = r.headers().map_err(|e| csv_io(path, e))?.clone();
    let q = headers.iter().filter(|h| h.starts_with('m')).count();
    if q == 0 || headers.iter().collect::<Vec<_>>() != posterior_header(q) {
        return Err(Error::parse(path, "unexpected posterior header"));
    }
    let width = q + q * (q + 1) / 2;
    let mut draws = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let bad = |msg: String| Error::parse(path, format!("row {}: {msg}", line + 1));
        let flat = (0..width)
            .map(|k| rec.get(k).unwrap_or("").parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        let iteration = rec.get(width).unwrap_or("").parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let chain = rec.get(width + 1).unwrap_or("").parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let theta = Theta::from_flat(q, &flat).map_err(|e| bad(e.to_string()))?;
        draws.push(ThetaDraw { chain, iteration, theta });
    }
    Ok((q, draws))
}

/// Serializable snapshot of a set of chains, random streams included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub version: u32,
    pub chains: Vec<StateDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub m: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub iteration: usize,
    pub accepted: u64,
    pub proposed: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    /// Word position of the stream, as a decimal string (128-bit).
    pub rng_word_pos: String,
}

impl ChainCheckpoint {
    pub fn from_states(states: &[ChainState]) -> Self {
        let chains = states
            .iter()
            .map(|s| StateDoc {
                m: s.theta.m.iter().copied().collect(),
                c: s.theta.c.row_iter().map(|r| r.iter().copied().collect()).collect(),
                x: s.xs.iter().map(|x| x.iter().copied().collect()).collect(),
                iteration: s.iteration,
                accepted: s.accepted,
                proposed: s.proposed,
                rng_seed: s.rng.get_seed(),
                rng_stream: s.rng.get_stream(),
                rng_word_pos: s.rng.get_word_pos().to_string(),
            })
            .collect();
        ChainCheckpoint { version: 1, chains }
    }

    pub fn to_states(&self) -> Result<Vec<ChainState>> {
        self.chains
            .iter()
            .map(|d| {
                let q = d.m.len();
                let flat: Vec<f64> = d.c.iter().flatten().copied().collect();
                if flat.len() != q * q {
                    return Err(Error::Argument("checkpoint covariance has the wrong shape".into()));
                }
                let theta = Theta::new(DVector::from_vec(d.m.clone()), DMatrix::from_row_slice(q, q, &flat))?;
                let mut rng = ChaCha20Rng::from_seed(d.rng_seed);
                rng.set_stream(d.rng_stream);
                let pos: u128 = d
                    .rng_word_pos
                    .parse()
                    .map_err(|_| Error::Argument("bad checkpoint word position".into()))?;
                rng.set_word_pos(pos);
                let mut s = ChainState::new(theta, d.x.iter().map(|x| DVector::from_vec(x.clone())).collect(), rng);
                s.iteration = d.iteration;
                s.accepted = d.accepted;
                s.proposed = d.proposed;
                Ok(s)
            })
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}
