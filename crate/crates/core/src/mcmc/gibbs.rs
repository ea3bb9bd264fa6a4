use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::likelihood::{c_factor, log_missing_conditional, prior_quadratic, LikelihoodContext, ObservationSet};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::prior::{conditional_c_scale, sample_inverse_wishart, sample_mean_given_c, sample_prior, PriorHyper, Theta};

/// Current `(m, C, X)` of one chain with its private random stream.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub theta: Theta,
    pub xs: Vec<DVector<f64>>,
    pub iteration: usize,
    pub accepted: u64,
    pub proposed: u64,
    pub rng: ChaCha20Rng,
}

impl ChainState {
    pub fn new(theta: Theta, xs: Vec<DVector<f64>>, rng: ChaCha20Rng) -> Self {
        ChainState {
            theta,
            xs,
            iteration: 0,
            accepted: 0,
            proposed: 0,
            rng,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Draws that fail to land in the support before this many tries are
/// treated as rejected proposals.
const MAX_TRUNCATION_TRIES: usize = 10_000;

fn truncated_gaussian<R: Rng + ?Sized>(
    m: &DVector<f64>,
    l: &DMatrix<f64>,
    ctx: &LikelihoodContext,
    rng: &mut R,
) -> Option<DVector<f64>> {
    (0..MAX_TRUNCATION_TRIES)
        .map(|_| linalg::sample_gaussian(m, l, rng))
        .find(|x| ctx.in_support(x.as_slice()))
}

/// `θ⁽⁰⁾` from the prior and `X⁽⁰⁾` from the prior predictive, truncated to
/// the support (uniform in the support if truncation fails).
pub fn initial_state(
    prior: &PriorHyper,
    ctx: &LikelihoodContext,
    n: usize,
    mut rng: ChaCha20Rng,
) -> Result<ChainState> {
    let theta = sample_prior(prior, &mut rng)?;
    let l = c_factor(&theta)?;
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = match truncated_gaussian(&theta.m, &l, ctx, &mut rng) {
            Some(x) => x,
            None => {
                let s = ctx.support().expect("truncation only fails with a support");
                DVector::from_vec(s.sample_uniform(&mut rng))
            }
        };
        xs.push(x);
    }
    Ok(ChainState::new(theta, xs, rng))
}

/// `C ~ IW(Λ + Σᵢ(m−Xᵢ)(m−Xᵢ)ᵀ + a(m−μ)(m−μ)ᵀ, ν+n+1)`.
pub fn sample_c_full_conditional<R: Rng + ?Sized>(
    m: &DVector<f64>,
    xs: &[DVector<f64>],
    prior: &PriorHyper,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let dof = prior.nu + xs.len() as f64 + 1.0;
    let mut scale = conditional_c_scale(prior, m, xs);
    let base = scale.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..6 {
        if linalg::is_spd(&scale) {
            let c = sample_inverse_wishart(&scale, dof, rng)?;
            if linalg::is_spd(&c) {
                return Ok(c);
            }
        }
        let next = if jitter == 0.0 { 1e-12 * base } else { jitter * 100.0 };
        for k in 0..scale.nrows() {
            scale[(k, k)] += next - jitter;
        }
        jitter = next;
    }
    Err(Error::Numerical("C full-conditional scale is not positive definite".into()))
}

/// `m ~ N((aμ + nX̄)/(n+a), C/(n+a))`.
pub fn sample_m_full_conditional<R: Rng + ?Sized>(
    c: &DMatrix<f64>,
    xs: &[DVector<f64>],
    prior: &PriorHyper,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = xs.len() as f64;
    let mut center = &prior.mu * prior.a;
    for x in xs {
        center += x;
    }
    center /= prior.a + n;
    sample_mean_given_c(&center, c, prior.a + n, rng)
}

/// One independence Metropolis–Hastings transition. Returns the new state
/// and whether the candidate was accepted.
pub fn independent_mh_step<T: Clone, R: Rng + ?Sized>(
    current: &T,
    candidate: T,
    log_target: impl Fn(&T) -> f64,
    log_proposal: impl Fn(&T) -> f64,
    rng: &mut R,
) -> (T, bool) {
    let log_alpha = log_target(&candidate) - log_target(current) + log_proposal(current) - log_proposal(&candidate);
    if accept(log_alpha, rng) {
        (candidate, true)
    } else {
        (current.clone(), false)
    }
}

/// The uniform variate is always drawn so that streams stay aligned
/// whatever the acceptance probability.
fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    log_alpha >= 0.0 || u.ln() < log_alpha
}

/// Updates every `Xᵢ` in random order with an independent MH move whose
/// proposal is `N(m, C)` truncated to the support. Returns the number of
/// accepted moves.
pub fn mh_update_missing<R: Rng + ?Sized>(
    xs: &mut [DVector<f64>],
    theta: &Theta,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    rng: &mut R,
) -> Result<usize> {
    mh_sweep(xs, theta, ctx, obs, 1, rng)
}

/// [`mh_update_missing`] with `steps` successive MH transitions per `Xᵢ`.
pub fn mh_sweep<R: Rng + ?Sized>(
    xs: &mut [DVector<f64>],
    theta: &Theta,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    steps: usize,
    rng: &mut R,
) -> Result<usize> {
    check_dim(obs.n(), xs.len())?;
    let l = c_factor(theta)?;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(rng);
    let log_j = |x: &DVector<f64>| prior_quadratic(x.as_slice(), &theta.m, &l);
    let mut accepted = 0;
    for i in order {
        let mut data_cur = if ctx.cross_covariance() {
            0.0
        } else {
            ctx.data_term(obs, i, xs[i].as_slice())?
        };
        for _ in 0..steps {
            let Some(candidate) = truncated_gaussian(&theta.m, &l, ctx, rng) else {
                let _: f64 = rng.random();
                continue;
            };
            // with an independent N(m, C) proposal the prior factor of the
            // target cancels against the proposal density
            let log_u = rng.random::<f64>().ln();
            let (log_alpha, data_new) = if ctx.cross_covariance() {
                let mut trial = xs.to_vec();
                trial[i] = candidate.clone();
                let ratio = log_missing_conditional(&trial, theta, ctx, obs)?
                    - log_missing_conditional(xs, theta, ctx, obs)?;
                (ratio + log_j(&xs[i]) - log_j(&candidate), 0.0)
            } else if ctx.data_term_bound(obs, i, candidate.as_slice())? - data_cur < log_u {
                // rejected whatever the exact MSE: skip computing it
                continue;
            } else {
                let data_new = ctx.data_term(obs, i, candidate.as_slice())?;
                (data_new - data_cur, data_new)
            };
            if log_alpha >= 0.0 || log_u < log_alpha {
                if !candidate.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numerical("non-finite missing-data draw".into()));
                }
                xs[i] = candidate;
                data_cur = data_new;
                accepted += 1;
            }
        }
    }
    Ok(accepted)
}

/// Gibbs steps 1 (C), 2 (m) and 3 (X by MH) in that order.
pub fn gibbs_step(
    state: &mut ChainState,
    prior: &PriorHyper,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
) -> Result<()> {
    gibbs_step_with(state, prior, ctx, obs, 1)
}

/// [`gibbs_step`] with `mh_steps` MH transitions per missing value.
pub fn gibbs_step_with(
    state: &mut ChainState,
    prior: &PriorHyper,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    mh_steps: usize,
) -> Result<()> {
    let c = sample_c_full_conditional(&state.theta.m, &state.xs, prior, &mut state.rng)?;
    let m = sample_m_full_conditional(&c, &state.xs, prior, &mut state.rng)?;
    state.theta = Theta { m, c };
    let acc = mh_sweep(&mut state.xs, &state.theta, ctx, obs, mh_steps, &mut state.rng)?;
    state.accepted += acc as u64;
    state.proposed += (state.xs.len() * mh_steps) as u64;
    state.iteration += 1;
    Ok(())
}

/// Seeded stream `stream` of the ChaCha20 generator.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
