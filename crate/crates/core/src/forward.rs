//! Forward models `H: ℝ^Q → ℝ^p`, the Bastos test function, run budgeting
//! and synthetic data generation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::doe::{csv_io, format_float, Domain};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::mcmc::ObservationSet;
use crate::prior::Theta;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostClass {
    Cheap,
    Expensive,
}

/// Deterministic computer model. `z = (x, d)` concatenates the latent
/// inputs and the observed covariates.
pub trait ForwardModel: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn cost(&self) -> CostClass;
    fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>>;

    fn evaluate_batch(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|z| self.evaluate(z)).collect()
    }
}

/// `H(x₁,x₂) = (1 − exp(−1/(2x₂))) · (2300x₁³+1900x₁²+2092x₁+60)/(100x₁³+500x₁²+4x₁+20)`.
///
/// At `x₂ = 0` the exponential factor is replaced by its limit 1.
pub fn bastos_h(x1: f64, x2: f64) -> f64 {
    let damp = if x2 <= 0.0 { 1.0 } else { 1.0 - (-1.0 / (2.0 * x2)).exp() };
    let num = ((2300.0 * x1 + 1900.0) * x1 + 2092.0) * x1 + 60.0;
    let den = ((100.0 * x1 + 500.0) * x1 + 4.0) * x1 + 20.0;
    damp * num / den
}

/// True when `bastos_h` had to use its `x₂ → 0` limit.
pub fn bastos_at_boundary(x2: f64) -> bool {
    x2 <= 0.0
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Bastos;

impl ForwardModel for Bastos {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn cost(&self) -> CostClass {
        CostClass::Cheap
    }
    fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(2, z.len())?;
        Ok(vec![bastos_h(z[0], z[1])])
    }
}

/// `H(x) = x`, used by the conjugate test problems.
#[derive(Clone, Copy, Debug)]
pub struct Identity {
    pub dim: usize,
}

impl ForwardModel for Identity {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn cost(&self) -> CostClass {
        CostClass::Cheap
    }
    fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, z.len())?;
        Ok(z.to_vec())
    }
}

/// Forward model backed by an external executable.
///
/// The program is invoked as `program [args…] <input.csv> <output.csv>`. The
/// input file has a header `z1,…,zQ` and one row per point; the program must
/// write a header `h1,…,hp` and one row per input row, in the same order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubprocessModel {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub work_dir: Option<PathBuf>,
}

impl SubprocessModel {
    fn run(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let dir = match &self.work_dir {
            Some(d) => d.clone(),
            None => std::env::temp_dir(),
        };
        let tag = format!(
            "adakrig-{}-{}",
            std::process::id(),
            RUN_TAG.fetch_add(1, Ordering::Relaxed)
        );
        let input = dir.join(format!("{tag}-in.csv"));
        let output = dir.join(format!("{tag}-out.csv"));
        write_points(&input, points, self.input_dim)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        let _ = std::fs::remove_file(&input);
        if !status.success() {
            return Err(Error::Forward(format!(
                "{} exited with {status}",
                self.program.display()
            )));
        }
        let rows = read_rows(&output, 'h', self.output_dim);
        let _ = std::fs::remove_file(&output);
        let rows = rows?;
        if rows.len() != points.len() {
            return Err(Error::Forward(format!(
                "{} returned {} rows for {} points",
                self.program.display(),
                rows.len(),
                points.len()
            )));
        }
        Ok(rows)
    }
}

static RUN_TAG: AtomicUsize = AtomicUsize::new(0);

impl ForwardModel for SubprocessModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn cost(&self) -> CostClass {
        CostClass::Expensive
    }
    fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(&[z.to_vec()])?.remove(0))
    }
    fn evaluate_batch(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        self.run(points)
    }
}

fn write_points(path: &Path, points: &[Vec<f64>], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record((1..=dim).map(|k| format!("z{k}")))
        .map_err(|e| csv_io(path, e))?;
    for z in points {
        check_dim(dim, z.len())?;
        w.write_record(z.iter().map(|v| format_float(*v)))
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads columns `<prefix>1..<prefix>dim` from a headed CSV file.
pub(crate) fn read_rows(path: &Path, prefix: char, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = r.headers().map_err(|e| csv_io(path, e))?.clone();
    let cols: Vec<usize> = (1..=dim)
        .map(|k| {
            let name = format!("{prefix}{k}");
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::parse(path, format!("missing column `{name}`")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let row = cols
            .iter()
            .map(|&c| {
                rec.get(c)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Counts true-model runs against a maximal budget.
#[derive(Debug)]
pub struct RunCounter {
    used: AtomicUsize,
    max: usize,
}

impl RunCounter {
    pub fn new(max: usize) -> Self {
        RunCounter {
            used: AtomicUsize::new(0),
            max,
        }
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn remaining(&self) -> usize {
        self.max.saturating_sub(self.used())
    }

    /// Reserves `k` runs atomically, failing without side effects when the
    /// budget would be exceeded.
    pub fn reserve(&self, k: usize) -> Result<()> {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| {
                (u + k <= self.max).then_some(u + k)
            })
            .map(|_| ())
            .map_err(|used| Error::Budget {
                used,
                max: self.max,
                requested: k,
            })
    }
}

/// Evaluates a batch of points, charging them to `counter` first.
pub fn eval_forward_batch(
    model: &dyn ForwardModel,
    points: &[Vec<f64>],
    counter: &RunCounter,
) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    for z in points {
        check_dim(model.input_dim(), z.len())?;
    }
    counter.reserve(points.len())?;
    model.evaluate_batch(points)
}

/// Simulated field data together with the hidden truth.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub theta: Theta,
    pub hidden_x: Vec<DVector<f64>>,
    pub y: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub r_diag: Vec<f64>,
}

impl SyntheticDataset {
    /// The field data as seen by the sampler; requires `R > 0`.
    pub fn observations(&self) -> Result<ObservationSet> {
        ObservationSet::new(self.y.clone(), self.d.clone(), self.r_diag.clone())
    }
}

/// Minimum acceptance rate of the truncation step.
const MIN_TRUNCATION_ACCEPTANCE: f64 = 1e-4;

/// Draws `X_i ~ N(m, C)` truncated to the `x` part of `domain` (first
/// `q = dim(m)` coordinates), covariates `d_i` uniformly on the remaining
/// coordinates, and `y_i = H(X_i, d_i) + U_i` with `U_i ~ N(0, diag(r))`.
pub fn generate_synthetic_data<R: Rng + ?Sized>(
    theta: &Theta,
    n: usize,
    r_diag: &[f64],
    domain: &Domain,
    rng: &mut R,
    model: &dyn ForwardModel,
) -> Result<SyntheticDataset> {
    let q = theta.dim();
    check_dim(model.input_dim(), domain.dim())?;
    check_dim(model.output_dim(), r_diag.len())?;
    if r_diag.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Argument("noise variances must be ≥ 0".into()));
    }
    let x_domain = domain.slice(0..q)?;
    let d_domain = (domain.dim() > q).then(|| domain.slice(q..domain.dim())).transpose()?;
    let factor = linalg::cholesky_lower(&theta.c)
        .ok_or_else(|| Error::Argument("true covariance is not SPD".into()))?;

    let mut hidden_x = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while hidden_x.len() < n {
        let x = linalg::sample_gaussian(&theta.m, &factor, rng);
        attempts += 1;
        if x_domain.contains(x.as_slice()) {
            hidden_x.push(x);
        } else if attempts >= 10_000
            && (hidden_x.len() as f64) < MIN_TRUNCATION_ACCEPTANCE * attempts as f64
        {
            return Err(Error::Argument(format!(
                "truncation to the domain accepts fewer than {MIN_TRUNCATION_ACCEPTANCE:e} of draws"
            )));
        }
    }
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for x in &hidden_x {
        let di = d_domain.as_ref().map(|dd| dd.sample_uniform(rng)).unwrap_or_default();
        let z: Vec<f64> = x.iter().copied().chain(di.iter().copied()).collect();
        let h = model.evaluate(&z)?;
        let yi: Vec<f64> = h
            .iter()
            .zip(r_diag)
            .map(|(hj, rj)| hj + rj.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        y.push(yi);
        d.push(di);
    }
    Ok(SyntheticDataset {
        theta: theta.clone(),
        hidden_x,
        y,
        d,
        r_diag: r_diag.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn bastos_hand_values() {
        let e = (-1.0f64).exp();
        assert!((bastos_h(0.0, 0.5) - 3.0 * (1.0 - e)).abs() < 1e-14);
        assert!((bastos_h(0.0, 0.5) - 1.89636).abs() < 1e-5);
        let v = bastos_h(0.5, 0.5);
        assert!((v - 1868.5 / 159.5 * (1.0 - e)).abs() < 1e-12);
        assert!((v - 7.4052).abs() < 1e-4);
        assert_eq!(bastos_h(0.0, 0.0), 3.0);
        assert!(bastos_at_boundary(0.0));
        assert!((bastos_h(0.0, 1e-6) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bastos_is_deterministic() {
        let a = Bastos.evaluate(&[0.3141, 0.2718]).unwrap();
        let b = Bastos.evaluate(&[0.3141, 0.2718]).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn budget_accounting() {
        let counter = RunCounter::new(10);
        assert!(eval_forward_batch(&Bastos, &[], &counter).unwrap().is_empty());
        assert_eq!(counter.used(), 0);
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 0.5]).collect();
        assert_eq!(eval_forward_batch(&Bastos, &pts, &counter).unwrap().len(), 10);
        assert_eq!(counter.used(), 10);
        let err = eval_forward_batch(&Bastos, &pts[..1], &counter).unwrap_err();
        assert!(matches!(err, Error::Budget { used: 10, max: 10, requested: 1 }));
        assert_eq!(counter.used(), 10);
    }

    #[test]
    fn identity_noise_free_data() {
        let theta = Theta::new(DVector::from_vec(vec![0.5, 0.5]), DMatrix::from_diagonal_element(2, 2, 0.01)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let ds = generate_synthetic_data(&theta, 20, &[0.0, 0.0], &Domain::unit(2), &mut rng, &Identity { dim: 2 }).unwrap();
        for (x, y) in ds.hidden_x.iter().zip(&ds.y) {
            assert_eq!(x.len(), y.len());
            assert_eq!(x.as_slice(), y.as_slice());
        }
    }

    #[test]
    fn toy_configuration_is_truncated() {
        let theta = Theta::new(
            DVector::from_vec(vec![0.52, 0.59]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.19f64.powi(2), 0.25f64.powi(2)])),
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let ds = generate_synthetic_data(&theta, 30, &[1e-5], &Domain::unit(2), &mut rng, &Bastos).unwrap();
        assert_eq!(ds.observations().unwrap().n(), 30);
        assert!(ds.hidden_x.iter().all(|x| Domain::unit(2).contains(x.as_slice())));
        let mut rng2 = ChaCha20Rng::seed_from_u64(6);
        let again = generate_synthetic_data(&theta, 30, &[1e-5], &Domain::unit(2), &mut rng2, &Bastos).unwrap();
        assert_eq!(ds.y, again.y);
    }

    #[test]
    fn impossible_truncation_is_reported() {
        let theta = Theta::new(DVector::from_vec(vec![50.0]), DMatrix::from_element(1, 1, 1e-4)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let err = generate_synthetic_data(&theta, 3, &[0.0], &Domain::unit(1), &mut rng, &Identity { dim: 1 });
        assert!(err.is_err());
    }
}
