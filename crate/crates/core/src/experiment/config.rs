use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{EcdConfig, MmseConfig, SaConfig, WimseConfig};
use crate::doe::Domain;
use crate::error::{Error, Result};
use crate::forward::{Bastos, ForwardModel, Identity, SubprocessModel};
use crate::gp::FitOptions;
use crate::mcmc::McmcConfig;
use crate::prior::{elicit_prior, PriorHyper};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Lhd,
    Mmse,
    Wimse,
    Ecd,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Lhd => "lhd",
            Strategy::Mmse => "mmse",
            Strategy::Wimse => "wimse",
            Strategy::Ecd => "ecd",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lhd" => Ok(Strategy::Lhd),
            "mmse" => Ok(Strategy::Mmse),
            "wimse" => Ok(Strategy::Wimse),
            "ecd" => Ok(Strategy::Ecd),
            other => Err(Error::config("strategy", format!("unknown strategy `{other}` (lhd, mmse, wimse, ecd)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Gaussian–Inverse-Wishart hyperparameters, either from an elicitation
/// surface `c_e` (`Λ = (a+1)C_e`, `ν = a+q+2`) or from `lambda` and `nu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub mu: Vec<f64>,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_e: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    Bastos,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Builtin(BuiltinModel),
    Subprocess(SubprocessModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub m: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub n: usize,
    /// Diagonal of the observation noise covariance.
    pub r: Vec<f64>,
    /// Seed of the data generator, independent of the run seed so that
    /// runs with different seeds share their field data.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvObservations {
    /// Columns `y1..yp`, then optional covariates `d1..dk`.
    pub path: PathBuf,
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    Synthetic(SyntheticSpec),
    Csv(CsvObservations),
}

/// One experiment: problem definition, design strategy and every tuning
/// parameter. Defaults reproduce the two-dimensional toy problem with the
/// 10-point maximin LHD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub domain: DomainSpec,
    /// Number of leading coordinates holding the unobserved inputs `x`; the
    /// remaining ones are observed covariates `d`. Defaults to all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing_dim: Option<usize>,
    pub prior: PriorSpec,
    pub model: ModelSpec,
    pub observations: ObservationSpec,
    pub initial_design: usize,
    /// Maximal number of forward-model runs, initial design included.
    pub budget: usize,
    pub strategy: Strategy,
    pub lhd_iterations: usize,
    /// Kernel parameters are re-estimated every `refit_every` additions and
    /// kept fixed in between.
    pub refit_every: usize,
    /// Gibbs iterations between two additions.
    pub gibbs_between: usize,
    pub kriging: FitOptions,
    pub mcmc: McmcConfig,
    pub sa: SaConfig,
    pub ecd: EcdConfig,
    pub wimse: WimseConfig,
    pub mmse: MmseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 0,
            domain: DomainSpec {
                lower: vec![0.0, 0.0],
                upper: vec![1.0, 1.0],
            },
            missing_dim: None,
            prior: PriorSpec {
                mu: vec![0.0, 0.0],
                a: 1.0,
                c_e: Some(vec![vec![0.18f64.powi(2), 0.0], vec![0.0, 0.4f64.powi(2)]]),
                lambda: None,
                nu: None,
            },
            model: ModelSpec::Builtin(BuiltinModel::Bastos),
            observations: ObservationSpec::Synthetic(SyntheticSpec {
                m: vec![0.52, 0.59],
                c: vec![vec![0.19f64.powi(2), 0.0], vec![0.0, 0.25f64.powi(2)]],
                n: 30,
                r: vec![1e-5],
                seed: 0,
            }),
            initial_design: 10,
            budget: 10,
            strategy: Strategy::Lhd,
            lhd_iterations: 2000,
            refit_every: 5,
            gibbs_between: 200,
            kriging: FitOptions::default(),
            mcmc: McmcConfig {
                mh_steps: 5,
                ..McmcConfig::default()
            },
            sa: SaConfig::default(),
            ecd: EcdConfig::default(),
            wimse: WimseConfig::default(),
            mmse: MmseConfig::default(),
        }
    }
}

fn matrix(rows: &[Vec<f64>], dim: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::config(field, format!("expected a {dim}×{dim} matrix")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    /// Reads and validates a JSON config. Unknown keys and type errors are
    /// reported with the path of the offending field.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(if field == "." { "config".to_string() } else { field }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn domain(&self) -> Result<Domain> {
        if self.domain.lower.len() != self.domain.upper.len() || self.domain.lower.is_empty() {
            return Err(Error::config("domain", "lower and upper must be non-empty and of equal length"));
        }
        Domain::new(self.domain.lower.clone(), self.domain.upper.clone())
            .map_err(|e| Error::config("domain", e.to_string()))
    }

    pub fn missing_dim(&self) -> usize {
        self.missing_dim.unwrap_or(self.domain.lower.len())
    }

    pub fn prior_hyper(&self) -> Result<PriorHyper> {
        let q = self.missing_dim();
        let p = &self.prior;
        if p.mu.len() != q {
            return Err(Error::config("prior.mu", format!("expected {q} components")));
        }
        let mu = DVector::from_column_slice(&p.mu);
        let wrap = |field: &str, e: Error| Error::config(field, e.to_string());
        match (&p.c_e, &p.lambda, p.nu) {
            (Some(c_e), None, None) => {
                elicit_prior(mu, matrix(c_e, q, "prior.c_e")?, p.a).map_err(|e| wrap("prior.c_e", e))
            }
            (None, Some(lambda), Some(nu)) => {
                PriorHyper::new(mu, p.a, matrix(lambda, q, "prior.lambda")?, nu).map_err(|e| wrap("prior.lambda", e))
            }
            _ => Err(Error::config("prior", "give either `c_e`, or both `lambda` and `nu`")),
        }
    }

    pub fn forward_model(&self) -> Result<Arc<dyn ForwardModel>> {
        let model: Arc<dyn ForwardModel> = match &self.model {
            ModelSpec::Builtin(BuiltinModel::Bastos) => Arc::new(Bastos),
            ModelSpec::Builtin(BuiltinModel::Identity) => Arc::new(Identity {
                dim: self.domain.lower.len(),
            }),
            ModelSpec::Subprocess(s) => Arc::new(s.clone()),
        };
        if model.input_dim() != self.domain.lower.len() {
            return Err(Error::config(
                "model",
                format!("model takes {} inputs, domain has {}", model.input_dim(), self.domain.lower.len()),
            ));
        }
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version)));
        }
        let domain = self.domain()?;
        let q = self.missing_dim();
        if q == 0 || q > domain.dim() {
            return Err(Error::config("missing_dim", format!("must lie in 1..={}", domain.dim())));
        }
        self.prior_hyper()?;
        let model = self.forward_model()?;
        let p = model.output_dim();
        match &self.observations {
            ObservationSpec::Synthetic(s) => {
                if s.m.len() != q {
                    return Err(Error::config("observations.synthetic.m", format!("expected {q} components")));
                }
                matrix(&s.c, q, "observations.synthetic.c")?;
                if s.n == 0 {
                    return Err(Error::config("observations.synthetic.n", "must be positive"));
                }
                check_noise(&s.r, p, "observations.synthetic.r")?;
            }
            ObservationSpec::Csv(c) => check_noise(&c.r, p, "observations.csv.r")?,
        }
        if self.initial_design < 2 {
            return Err(Error::config("initial_design", "must be at least 2"));
        }
        if self.budget < self.initial_design {
            return Err(Error::config(
                "budget",
                format!("budget {} is smaller than the initial design {}", self.budget, self.initial_design),
            ));
        }
        if self.refit_every == 0 {
            return Err(Error::config("refit_every", "must be positive"));
        }
        self.mcmc.validate()?;
        self.sa.validate("sa")?;
        self.ecd.validate()?;
        self.wimse.validate()?;
        if self.mmse.grid_per_dim == 0 {
            return Err(Error::config("mmse.grid_per_dim", "must be positive"));
        }
        if self.kriging.starts == 0 {
            return Err(Error::config("kriging.starts", "must be positive"));
        }
        Ok(())
    }
}

fn check_noise(r: &[f64], p: usize, field: &str) -> Result<()> {
    if r.len() != p {
        return Err(Error::config(field, format!("expected {p} noise variances")));
    }
    if r.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::config(field, "noise variances must be > 0"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_roundtrips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let h = c.prior_hyper().unwrap();
        assert_eq!(h.nu, 5.0);
        assert!((h.lambda[(1, 1)] - 2.0 * 0.16).abs() < 1e-15);
    }

    #[test]
    fn partial_config_takes_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 4, "budget": 15, "strategy": "ecd"}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.strategy, Strategy::Ecd);
        assert_eq!(c.sa.iterations, 1000);
        assert_eq!(c.ecd.fantasies, 100);
        assert_eq!(c.wimse.alpha, 0.8);
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_json(text).unwrap_err() {
            Error::Config { field, .. } => field,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(r#"{"mcmc": {"chains": "three"}}"#), "mcmc.chains");
        assert_eq!(field_of(r#"{"sa": {"bogus": 1}}"#), "sa.bogus");
        assert_eq!(field_of(r#"{"budget": 5}"#), "budget");
        assert_eq!(field_of(r#"{"wimse": {"alpha": 1.5}}"#), "wimse.alpha");
        assert_eq!(field_of(r#"{"mcmc": {"chains": 1}}"#), "mcmc.chains");
        assert_eq!(field_of(r#"{"version": 9}"#), "version");
        assert_eq!(field_of(r#"{"prior": {"mu": [0], "a": 1, "c_e": [[1]]}}"#), "prior.mu");
    }

    #[test]
    fn strategy_names_parse() {
        for s in [Strategy::Lhd, Strategy::Mmse, Strategy::Wimse, Strategy::Ecd] {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("greedy".parse::<Strategy>().is_err());
    }
}
