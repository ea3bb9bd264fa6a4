use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{RunDiagnostics, AUDIT_FILE, CONFIG_FILE, DIAGNOSTICS_FILE, POSTERIOR_FILE};
use crate::criteria::{knn_kl_estimate, AuditLog, AuditRecord};
use crate::error::{Error, Result};
use crate::mcmc::{read_posterior_csv, ThetaDraw};

/// Largest sample handed to the KL estimator.
const MAX_KL_DRAWS: usize = 2000;

fn load_config(dir: &Path) -> Result<ExperimentConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
}

fn load_diagnostics(dir: &Path) -> Result<RunDiagnostics> {
    let path = dir.join(DIAGNOSTICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
}

fn load_posterior(dir: &Path) -> Result<Vec<ThetaDraw>> {
    let path = dir.join(POSTERIOR_FILE);
    if !path.exists() {
        return Err(Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let (_, draws) = read_posterior_csv(&path)?;
    if draws.is_empty() {
        return Err(Error::parse(&path, "posterior sample is empty"));
    }
    Ok(draws)
}

/// `(m, diag C)` of at most `max` evenly spaced draws.
fn thinned(draws: &[&ThetaDraw], max: usize) -> Vec<Vec<f64>> {
    let n = draws.len();
    let k = n.min(max);
    (0..k).map(|i| draws[i * n / k].theta.mean_and_variances()).collect()
}

/// Identifies the problem a run was made for; runs may only be compared when
/// these parts of their configs agree.
fn problem_key(c: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "domain": c.domain,
        "missing_dim": c.missing_dim(),
        "prior": c.prior,
        "model": c.model,
        "observations": c.observations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run: String,
    pub strategy: String,
    pub seed: u64,
    /// k-NN estimate of `KL(run posterior ‖ benchmark posterior)` on
    /// `(m, diag C)`.
    pub kl: f64,
    pub q2: Option<f64>,
    pub design_size: usize,
    pub forward_runs: usize,
    pub converged: bool,
}

/// KL divergence from every run's posterior sample to the benchmark one.
/// Comparing the benchmark with itself splits its chains into two groups.
pub fn cmd_compare(runs: &[PathBuf], benchmark: &Path, out: Option<&Path>) -> Result<Vec<CompareRow>> {
    if !benchmark.is_dir() {
        return Err(Error::io(benchmark, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let bench_key = problem_key(&load_config(benchmark)?);
    let bench_draws = load_posterior(benchmark)?;
    let bench_all: Vec<&ThetaDraw> = bench_draws.iter().collect();
    let bench_sample = thinned(&bench_all, MAX_KL_DRAWS);
    let bench_canon = benchmark.canonicalize().map_err(|e| Error::io(benchmark, e))?;
    for dir in runs {
        if problem_key(&load_config(dir)?) != bench_key {
            return Err(Error::config(
                "compare",
                format!("{} was run on a different problem than the benchmark", dir.display()),
            ));
        }
    }
    let rows = runs
        .par_iter()
        .map(|dir| {
            let diag = load_diagnostics(dir)?;
            let draws = load_posterior(dir)?;
            let same = dir.canonicalize().map_err(|e| Error::io(dir, e))? == bench_canon;
            let kl = if same {
                let even: Vec<&ThetaDraw> = draws.iter().filter(|d| d.chain % 2 == 0).collect();
                let odd: Vec<&ThetaDraw> = draws.iter().filter(|d| d.chain % 2 == 1).collect();
                if odd.is_empty() {
                    return Err(Error::DegenerateSample("self-comparison needs at least two chains".into()));
                }
                knn_kl_estimate(&thinned(&even, MAX_KL_DRAWS), &thinned(&odd, MAX_KL_DRAWS))?
            } else {
                let all: Vec<&ThetaDraw> = draws.iter().collect();
                knn_kl_estimate(&thinned(&all, MAX_KL_DRAWS), &bench_sample)?
            };
            Ok(CompareRow {
                run: dir.display().to_string(),
                strategy: diag.strategy.name().into(),
                seed: diag.seed,
                kl,
                q2: diag.q2,
                design_size: diag.design_size,
                forward_runs: diag.forward_runs,
                converged: diag.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("compare.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| crate::doe::csv_io(&path, e))?;
        for row in &rows {
            w.serialize(row).map_err(|e| crate::doe::csv_io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = out.join("compare.md");
        std::fs::write(&path, compare_markdown(&rows, benchmark)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}

fn fmt_q2(q2: Option<f64>) -> String {
    q2.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

pub fn compare_markdown(rows: &[CompareRow], benchmark: &Path) -> String {
    let mut s = format!("# Posterior comparison against `{}`\n\n", benchmark.display());
    s.push_str("| run | strategy | seed | KL to benchmark | Q2 | design size | forward runs | converged |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.4} | {} | {} | {} | {} |",
            r.run,
            r.strategy,
            r.seed,
            r.kl,
            fmt_q2(r.q2),
            r.design_size,
            r.forward_runs,
            r.converged
        );
    }
    s
}

/// Contents of a run directory, summarized.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub diagnostics: RunDiagnostics,
    pub additions: Vec<AuditRecord>,
    /// Column names, posterior means and standard deviations of `(m, C)`.
    pub posterior: Vec<(String, f64, f64)>,
}

pub fn cmd_diagnose(dir: &Path) -> Result<RunReport> {
    if !dir.join(DIAGNOSTICS_FILE).exists() && !dir.join(POSTERIOR_FILE).exists() {
        return Err(Error::Argument(format!("{} holds no run artifacts", dir.display())));
    }
    let diagnostics = load_diagnostics(dir)?;
    let draws = load_posterior(dir)?;
    let audit_path = dir.join(AUDIT_FILE);
    let additions = if audit_path.exists() {
        AuditLog::read(&audit_path)?
            .into_iter()
            .filter(|r| matches!(r, AuditRecord::Addition { .. }))
            .collect()
    } else {
        Vec::new()
    };
    let q = draws[0].theta.dim();
    let mut names: Vec<String> = (1..=q).map(|k| format!("m{k}")).collect();
    for i in 1..=q {
        for j in i..=q {
            names.push(format!("C{i}{j}"));
        }
    }
    let flats: Vec<Vec<f64>> = draws.iter().map(|d| d.theta.to_flat()).collect();
    let n = flats.len() as f64;
    let posterior = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let mean = flats.iter().map(|f| f[k]).sum::<f64>() / n;
            let var = flats.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (name, mean, var.sqrt())
        })
        .collect();
    Ok(RunReport {
        dir: dir.to_path_buf(),
        diagnostics,
        additions,
        posterior,
    })
}

impl RunReport {
    pub fn render(&self) -> String {
        let d = &self.diagnostics;
        let mut s = format!("# Run `{}` ({}, seed {})\n\n", self.dir.display(), d.strategy.name(), d.seed);
        let _ = writeln!(
            s,
            "converged: {}  iterations: {}  burn-in: {}  draws: {}  forward runs: {}/{}\n",
            d.converged, d.iterations, d.burn_in, d.draws, d.forward_runs, d.budget
        );
        s.push_str("## MH acceptance rate per chain\n\n");
        for (c, a) in d.acceptance_rates.iter().enumerate() {
            let _ = writeln!(s, "- chain {c}: {a:.4}");
        }
        s.push_str("\n## Brooks-Gelman R-hat\n\n| iteration | R-hat |\n|---|---|\n");
        for (t, r) in &d.rhat_history {
            let _ = writeln!(s, "| {t} | {r:.4} |");
        }
        s.push_str("\n## Q2 by design size\n\n| design size | Q2 |\n|---|---|\n");
        for e in &d.q2_history {
            let _ = writeln!(s, "| {} | {} |", e.design_size, fmt_q2(e.q2));
        }
        s.push_str("\n## Posterior\n\n| parameter | mean | sd |\n|---|---|---|\n");
        for (name, mean, sd) in &self.posterior {
            let _ = writeln!(s, "| {name} | {mean:.5} | {sd:.5} |");
        }
        if !self.additions.is_empty() {
            s.push_str("\n## Added points\n\n| addition | point | score | forward runs |\n|---|---|---|---|\n");
            for r in &self.additions {
                if let AuditRecord::Addition {
                    addition,
                    point,
                    score,
                    forward_runs,
                    ..
                } = r
                {
                    let _ = writeln!(s, "| {addition} | {point:.4?} | {score:.5} | {forward_runs} |");
                }
            }
        }
        s
    }
}
