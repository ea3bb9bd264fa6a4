use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ObservationSpec, Strategy};
use crate::criteria::{
    ecd_select, max_mse_grid_point, mmse_select, wimse_select, AuditLog, AuditRecord, EcdSnapshot, SaOutcome,
    WimseSnapshot,
};
use crate::doe::{has_latin_property, maximin_lhd, Design, Domain, Provenance};
use crate::error::{Error, Result};
use crate::forward::{eval_forward_batch, generate_synthetic_data, ForwardModel, RunCounter};
use crate::gp::{fit_components, q2_of_models, recondition_components, FitOptions, KrigingModel, COINCIDENCE_TOL};
use crate::mcmc::{
    gibbs_step_with, initial_state, run_chain, write_posterior_csv, ChainCheckpoint, ChainRun, ChainState,
    LikelihoodContext, McmcConfig, ObservationSet,
};
use crate::prior::{PriorHyper, Theta};

pub const CONFIG_FILE: &str = "config.json";
pub const DESIGN_FILE: &str = "design.csv";
pub const DESIGN_META_FILE: &str = "design.json";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Independent sub-seeds derived from the run seed.
struct Seeds {
    design: u64,
    fit: u64,
    chain: u64,
    select: u64,
}

impl Seeds {
    fn derive(seed: u64) -> Self {
        let mut master = ChaCha20Rng::seed_from_u64(seed);
        Seeds {
            design: master.random(),
            fit: master.random(),
            chain: master.random(),
            select: master.random(),
        }
    }
}

/// A validated config with its derived objects.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub domain: Domain,
    pub x_domain: Domain,
    pub prior: PriorHyper,
    pub model: Arc<dyn ForwardModel>,
    pub observations: ObservationSet,
    /// Hidden inputs of synthetic data.
    pub truth: Option<(Theta, Vec<DVector<f64>>)>,
    seeds: Seeds,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let domain = config.domain()?;
        let q = config.missing_dim();
        let x_domain = domain.slice(0..q)?;
        let prior = config.prior_hyper()?;
        let model = config.forward_model()?;
        let (observations, truth) = match &config.observations {
            ObservationSpec::Synthetic(s) => {
                let c = DMatrix::from_fn(q, q, |i, j| s.c[i][j]);
                let theta = Theta::new(DVector::from_column_slice(&s.m), c)
                    .map_err(|e| Error::config("observations.synthetic.c", e.to_string()))?;
                let mut rng = ChaCha20Rng::seed_from_u64(s.seed);
                let data = generate_synthetic_data(&theta, s.n, &s.r, &domain, &mut rng, model.as_ref())?;
                (data.observations()?, Some((theta, data.hidden_x)))
            }
            ObservationSpec::Csv(c) => (read_observations_csv(&c.path, model.output_dim(), domain.dim() - q, &c.r)?, None),
        };
        let seeds = Seeds::derive(config.seed);
        Ok(Experiment {
            config,
            domain,
            x_domain,
            prior,
            model,
            observations,
            truth,
            seeds,
        })
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            seed: self.seeds.fit,
            ..self.config.kriging.clone()
        }
    }

    fn mcmc_config(&self) -> McmcConfig {
        McmcConfig {
            seed: self.seeds.chain,
            ..self.config.mcmc.clone()
        }
    }

    /// Maximin LHD of `initial_design` points, evaluated on the forward
    /// model and charged to `counter`.
    pub fn initial_design(&self, counter: &RunCounter) -> Result<Design> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seeds.design);
        let design = maximin_lhd(self.config.initial_design, &self.domain, &mut rng, self.config.lhd_iterations)?;
        let evals = eval_forward_batch(self.model.as_ref(), &design.coordinates(), counter)?;
        design.with_evaluations(evals)
    }

    pub fn fit(&self, design: &Design) -> Result<Vec<KrigingModel>> {
        let evals = evaluations(design, None)?;
        fit_components(&design.coordinates(), &evals, &self.domain, &self.fit_options())
    }

    /// Likelihood context of the emulator `models` over the input support.
    pub fn context(&self, models: Vec<KrigingModel>) -> Result<LikelihoodContext> {
        Ok(LikelihoodContext::kriging(models, Some(self.x_domain.clone()))?.with_cross_covariance(self.config.mcmc.cross_covariance))
    }

    fn prepare_dir(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(CONFIG_FILE);
        std::fs::write(&path, self.config.to_json()).map_err(|e| Error::io(&path, e))?;
        write_observations_csv(&out.join(OBSERVATIONS_FILE), &self.observations)
    }
}

fn evaluations(design: &Design, path: Option<&Path>) -> Result<Vec<Vec<f64>>> {
    design.evaluations().ok_or_else(|| {
        let path = path.map_or_else(|| PathBuf::from("<design>"), Path::to_path_buf);
        Error::parse(path, "design has points without forward-model evaluations (columns h1..hp)")
    })
}

/// Summary written to `diagnostics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub version: u32,
    pub strategy: Strategy,
    pub seed: u64,
    pub converged: bool,
    pub degenerate: bool,
    pub iterations: usize,
    pub burn_in: usize,
    pub draws: usize,
    pub rhat_history: Vec<(usize, f64)>,
    pub acceptance_rates: Vec<f64>,
    pub design_size: usize,
    pub forward_runs: usize,
    pub budget: usize,
    pub q2: Option<f64>,
    pub q2_history: Vec<Q2Entry>,
    pub min_intersite_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Q2Entry {
    pub design_size: usize,
    pub q2: Option<f64>,
}

/// What a design command produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub size: usize,
    pub min_intersite_distance: f64,
    pub latin: bool,
    pub forward_runs: usize,
}

/// Generates and evaluates the initial maximin LHD.
pub fn cmd_design(config: &ExperimentConfig, out: &Path) -> Result<DesignReport> {
    let exp = Experiment::new(config.clone())?;
    exp.prepare_dir(out)?;
    let counter = RunCounter::new(config.budget);
    let design = exp.initial_design(&counter)?;
    design.write_csv(&out.join(DESIGN_FILE))?;
    design.write_json(&out.join(DESIGN_META_FILE))?;
    Ok(DesignReport {
        size: design.len(),
        min_intersite_distance: design.min_intersite_distance()?,
        latin: has_latin_property(&design),
        forward_runs: counter.used(),
    })
}

fn q2_entry(models: &[KrigingModel]) -> Q2Entry {
    Q2Entry {
        design_size: models.first().map_or(0, KrigingModel::len),
        q2: q2_of_models(models).ok(),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    exp: &Experiment,
    out: &Path,
    design: &Design,
    models: Vec<KrigingModel>,
    counter: &RunCounter,
    q2_history: Vec<Q2Entry>,
) -> Result<RunDiagnostics> {
    design.write_csv(&out.join(DESIGN_FILE))?;
    design.write_json(&out.join(DESIGN_META_FILE))?;
    let ctx = exp.context(models.clone())?;
    let run: ChainRun = run_chain(&exp.mcmc_config(), &exp.prior, &ctx, &exp.observations)?;
    write_posterior_csv(&out.join(POSTERIOR_FILE), exp.prior.dim(), &run.draws)?;
    let diagnostics = RunDiagnostics {
        version: super::config::CONFIG_VERSION,
        strategy: exp.config.strategy,
        seed: exp.config.seed,
        converged: run.converged,
        degenerate: run.degenerate,
        iterations: run.iterations,
        burn_in: run.burn_in,
        draws: run.draws.len(),
        rhat_history: run.rhat_history.clone(),
        acceptance_rates: run.acceptance_rates.clone(),
        design_size: design.len(),
        forward_runs: counter.used(),
        budget: counter.max(),
        q2: q2_of_models(&models).ok(),
        q2_history,
        min_intersite_distance: design.min_intersite_distance()?,
    };
    let path = out.join(DIAGNOSTICS_FILE);
    let text = serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(diagnostics)
}

fn fresh_audit(out: &Path) -> Result<AuditLog> {
    let path = out.join(AUDIT_FILE);
    if path.exists() {
        std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    AuditLog::create(&path)
}

/// Fits the metamodels on a design (read from `design_file`, or the
/// initial maximin LHD) and samples the posterior.
pub fn cmd_calibrate(config: &ExperimentConfig, design_file: Option<&Path>, out: &Path) -> Result<RunDiagnostics> {
    let exp = Experiment::new(config.clone())?;
    exp.prepare_dir(out)?;
    let counter = RunCounter::new(config.budget);
    let design = match design_file {
        Some(path) => {
            let design = Design::read_csv(path, exp.domain.clone())?;
            evaluations(&design, Some(path))?;
            counter.reserve(design.len())?;
            design
        }
        None => exp.initial_design(&counter)?,
    };
    let mut audit = fresh_audit(out)?;
    audit.append(&AuditRecord::InitialDesign {
        size: design.len(),
        forward_runs: counter.used(),
    })?;
    audit.flush()?;
    let models = exp.fit(&design)?;
    let history = vec![q2_entry(&models)];
    finish(&exp, out, &design, models, &counter, history)
}

fn provenance(strategy: Strategy) -> Provenance {
    match strategy {
        Strategy::Lhd => Provenance::InitialLhd,
        Strategy::Mmse => Provenance::Mmse,
        Strategy::Wimse => Provenance::Wimse,
        Strategy::Ecd => Provenance::Ecd,
    }
}

fn coincident(design: &Design, z: &[f64]) -> bool {
    let dom = design.domain();
    let u = dom.to_unit(z);
    design.points().iter().any(|p| {
        let v = dom.to_unit(&p.z);
        v.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= COINCIDENCE_TOL
    })
}

/// Mutable state of the sequential loop.
struct Loop<'a> {
    exp: &'a Experiment,
    counter: RunCounter,
    design: Design,
    models: Vec<KrigingModel>,
    ctx: LikelihoodContext,
    state: Option<ChainState>,
    q2_history: Vec<Q2Entry>,
}

impl Loop<'_> {
    fn select(&mut self, rng: &mut ChaCha20Rng) -> Result<(SaOutcome, f64)> {
        let exp = self.exp;
        let cfg = &exp.config;
        let strategy = cfg.strategy;
        if strategy != Strategy::Mmse {
            let state = self.state.as_mut().expect("chain state for posterior-driven criteria");
            for _ in 0..cfg.gibbs_between {
                gibbs_step_with(state, &exp.prior, &self.ctx, &exp.observations, cfg.mcmc.mh_steps)?;
            }
        }
        let start = || max_mse_grid_point(&self.models, &exp.domain, start_resolution(exp.domain.dim()));
        match strategy {
            Strategy::Mmse => {
                let o = mmse_select(&self.models, &exp.domain, &cfg.mmse, &cfg.sa, rng)?;
                let score = -o.best_value;
                Ok((o, score))
            }
            Strategy::Wimse => {
                let theta = &self.state.as_ref().expect("chain state").theta;
                let snap = WimseSnapshot::build(theta, &self.ctx, &exp.observations, &exp.domain, &cfg.wimse, rng)?;
                let o = wimse_select(&snap, &self.models, &exp.domain, &cfg.sa, Some(start()), rng)?;
                let score = o.best_value;
                Ok((o, score))
            }
            Strategy::Ecd => {
                let state = self.state.as_ref().expect("chain state");
                let snap = EcdSnapshot::build(
                    &state.theta,
                    &state.xs,
                    &exp.prior,
                    &self.ctx,
                    &exp.observations,
                    &cfg.ecd,
                    rng,
                )?;
                let o = ecd_select(
                    &snap,
                    &self.ctx,
                    &exp.observations,
                    &cfg.ecd,
                    &exp.domain,
                    &cfg.sa,
                    self.design.len(),
                    self.counter.max(),
                    Some(start()),
                    rng,
                )?;
                let score = o.best_value;
                Ok((o, score))
            }
            Strategy::Lhd => unreachable!("rejected before the loop"),
        }
    }

    fn add(&mut self, addition: usize, audit: &mut AuditLog, rng: &mut ChaCha20Rng) -> Result<()> {
        let exp = self.exp;
        let strategy = exp.config.strategy;
        let (outcome, score) = self.select(rng)?;
        for step in &outcome.trace {
            audit.append(&AuditRecord::Candidate {
                strategy: strategy.name().into(),
                addition,
                candidate: step.candidate.clone(),
                score: if strategy == Strategy::Mmse { -step.value } else { step.value },
                accepted: step.accepted,
            })?;
        }
        let mut z = outcome.best;
        if coincident(&self.design, &z) {
            // an existing point carries no information: fall back to the
            // largest prediction error
            z = max_mse_grid_point(&self.models, &exp.domain, exp.config.mmse.grid_per_dim);
            if coincident(&self.design, &z) {
                return Err(Error::DegenerateDesign("every candidate coincides with the design".into()));
            }
        }
        let h = eval_forward_batch(exp.model.as_ref(), std::slice::from_ref(&z), &self.counter)?.remove(0);
        let (design, _) = self.design.augment(z.clone(), Some(h.clone()), provenance(strategy))?;
        self.design = design;
        let points = self.design.coordinates();
        let evals = evaluations(&self.design, None)?;
        self.models = if (addition + 1) % exp.config.refit_every == 0 {
            fit_components(&points, &evals, &exp.domain, &exp.fit_options())?
        } else {
            recondition_components(&self.models, &points, &evals)?
        };
        self.ctx = self.ctx.with_models(self.models.clone())?;
        let entry = q2_entry(&self.models);
        audit.append(&AuditRecord::Addition {
            strategy: strategy.name().into(),
            addition,
            point: z,
            evaluation: h,
            score,
            design_size: self.design.len(),
            forward_runs: self.counter.used(),
            q2: entry.q2,
        })?;
        audit.flush()?;
        self.q2_history.push(entry);
        Ok(())
    }
}

fn start_resolution(dim: usize) -> usize {
    ((4096f64).powf(1.0 / dim as f64).floor() as usize).clamp(2, 32)
}

/// Sequential design: initial LHD, then `budget − initial_design`
/// additions chosen by the configured criterion, then the final posterior.
/// On failure inside the loop the current design and chain state are kept
/// in the run directory.
pub fn cmd_adaptive(config: &ExperimentConfig, out: &Path) -> Result<RunDiagnostics> {
    if config.strategy == Strategy::Lhd {
        return Err(Error::config("strategy", "adaptive runs need mmse, wimse or ecd"));
    }
    let exp = Experiment::new(config.clone())?;
    exp.prepare_dir(out)?;
    let counter = RunCounter::new(config.budget);
    let design = exp.initial_design(&counter)?;
    let mut audit = fresh_audit(out)?;
    audit.append(&AuditRecord::InitialDesign {
        size: design.len(),
        forward_runs: counter.used(),
    })?;
    let models = exp.fit(&design)?;
    let ctx = exp.context(models.clone())?;
    let state = if config.strategy == Strategy::Mmse {
        None
    } else {
        let rng = ChaCha20Rng::seed_from_u64(exp.seeds.chain ^ 0x5eed);
        Some(initial_state(&exp.prior, &ctx, exp.observations.n(), rng)?)
    };
    let mut lp = Loop {
        exp: &exp,
        counter,
        design,
        q2_history: vec![q2_entry(&models)],
        models,
        ctx,
        state,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(exp.seeds.select);
    for addition in 0..config.budget - config.initial_design {
        if let Err(e) = lp.add(addition, &mut audit, &mut rng) {
            audit.flush()?;
            lp.design.write_csv(&out.join(DESIGN_FILE))?;
            if let Some(state) = &lp.state {
                ChainCheckpoint::from_states(std::slice::from_ref(state)).write_json(&out.join(CHECKPOINT_FILE))?;
            }
            return Err(e);
        }
    }
    audit.flush()?;
    let Loop {
        design,
        models,
        counter,
        q2_history,
        ..
    } = lp;
    finish(&exp, out, &design, models, &counter, q2_history)
}

/// Writes field data as `y1..yp,d1..dk`.
pub fn write_observations_csv(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::doe::csv_io(path, e))?;
    let header: Vec<String> = (1..=obs.p())
        .map(|j| format!("y{j}"))
        .chain((1..=obs.covariate_dim()).map(|k| format!("d{k}")))
        .collect();
    w.write_record(&header).map_err(|e| crate::doe::csv_io(path, e))?;
    for i in 0..obs.n() {
        let d = obs.d().get(i).cloned().unwrap_or_default();
        let row: Vec<String> = obs.y()[i].iter().chain(&d).map(|v| crate::doe::format_float(*v)).collect();
        w.write_record(&row).map_err(|e| crate::doe::csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads field data written as `y1..yp,d1..dk`.
pub fn read_observations_csv(path: &Path, p: usize, covariates: usize, r: &[f64]) -> Result<ObservationSet> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| crate::doe::csv_io(path, e))?;
    let headers = rdr.headers().map_err(|e| crate::doe::csv_io(path, e))?.clone();
    let find = |name: String| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::parse(path, format!("missing column `{name}`")))
    };
    let y_cols = (1..=p).map(|j| find(format!("y{j}"))).collect::<Result<Vec<_>>>()?;
    let d_cols = (1..=covariates).map(|k| find(format!("d{k}"))).collect::<Result<Vec<_>>>()?;
    let (mut y, mut d) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| crate::doe::csv_io(path, e))?;
        let get = |c: &usize| -> Result<f64> {
            rec.get(*c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))
        };
        y.push(y_cols.iter().map(get).collect::<Result<Vec<_>>>()?);
        if covariates > 0 {
            d.push(d_cols.iter().map(get).collect::<Result<Vec<_>>>()?);
        }
    }
    if y.is_empty() {
        return Err(Error::parse(path, "no observations"));
    }
    ObservationSet::new(y, d, r.to_vec())
}
