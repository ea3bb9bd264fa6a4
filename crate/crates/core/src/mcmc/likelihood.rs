use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::doe::Domain;
use crate::error::{check_dim, Error, Result};
use crate::forward::ForwardModel;
use crate::gp::KrigingModel;
use crate::linalg;
use crate::prior::Theta;

/// Field data `yᵢ = H(Xᵢ, dᵢ) + Uᵢ`, `Uᵢ ~ N(0, R)` with `R` diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    y: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    r: Vec<f64>,
}

impl ObservationSet {
    /// `d` may be empty (no covariates) or hold one row per observation.
    pub fn new(y: Vec<Vec<f64>>, d: Vec<Vec<f64>>, r_diag: Vec<f64>) -> Result<Self> {
        let p = r_diag.len();
        if p == 0 {
            return Err(Error::Argument("observations need at least one output".into()));
        }
        if r_diag.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Argument("noise variances must be > 0".into()));
        }
        for yi in &y {
            check_dim(p, yi.len())?;
        }
        let d = if d.is_empty() { vec![Vec::new(); y.len()] } else { d };
        check_dim(y.len(), d.len())?;
        let q2 = d.first().map_or(0, Vec::len);
        for di in &d {
            check_dim(q2, di.len())?;
        }
        Ok(ObservationSet { y, d, r: r_diag })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.r.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.d.first().map_or(0, Vec::len)
    }

    pub fn y(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn d(&self) -> &[Vec<f64>] {
        &self.d
    }

    pub fn r_diag(&self) -> &[f64] {
        &self.r
    }

    /// Model input `z = (x, dᵢ)`.
    pub fn input(&self, i: usize, x: &[f64]) -> Vec<f64> {
        x.iter().chain(&self.d[i]).copied().collect()
    }
}

/// Source of `Ĥ` and its mean-square error.
#[derive(Clone, Debug)]
pub enum Emulator {
    /// One kriging model per output component.
    Kriging(Vec<KrigingModel>),
    /// The forward model itself (zero MSE).
    Exact(Arc<dyn ForwardModel>),
}

/// Everything the missing-data conditional needs besides `θ` and the data.
#[derive(Clone, Debug)]
pub struct LikelihoodContext {
    emulator: Emulator,
    support: Option<Domain>,
    cross_covariance: bool,
}

impl LikelihoodContext {
    pub fn kriging(models: Vec<KrigingModel>, support: Option<Domain>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Argument("at least one kriging model is required".into()))?;
        let dim = first.dim();
        for m in &models {
            check_dim(dim, m.dim())?;
        }
        Ok(LikelihoodContext {
            emulator: Emulator::Kriging(models),
            support,
            cross_covariance: false,
        })
    }

    pub fn exact(model: Arc<dyn ForwardModel>, support: Option<Domain>) -> Self {
        LikelihoodContext {
            emulator: Emulator::Exact(model),
            support,
            cross_covariance: false,
        }
    }

    /// Keep the kriging covariances between the `n` latent points instead of
    /// only their variances.
    pub fn with_cross_covariance(mut self, on: bool) -> Self {
        self.cross_covariance = on;
        self
    }

    pub fn cross_covariance(&self) -> bool {
        self.cross_covariance
    }

    pub fn emulator(&self) -> &Emulator {
        &self.emulator
    }

    pub fn models(&self) -> Option<&[KrigingModel]> {
        match &self.emulator {
            Emulator::Kriging(m) => Some(m),
            Emulator::Exact(_) => None,
        }
    }

    /// Same support and options, new metamodels.
    pub fn with_models(&self, models: Vec<KrigingModel>) -> Result<Self> {
        Ok(LikelihoodContext::kriging(models, self.support.clone())?.with_cross_covariance(self.cross_covariance))
    }

    pub fn support(&self) -> Option<&Domain> {
        self.support.as_ref()
    }

    pub fn output_dim(&self) -> usize {
        match &self.emulator {
            Emulator::Kriging(m) => m.len(),
            Emulator::Exact(f) => f.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.emulator {
            Emulator::Kriging(m) => m[0].dim(),
            Emulator::Exact(f) => f.input_dim(),
        }
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        self.support.as_ref().is_none_or(|s| s.contains(x))
    }

    /// `(Ĥ(z), MSE(z))` per output component.
    pub fn predict(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.emulator {
            Emulator::Kriging(models) => {
                let mut mean = Vec::with_capacity(models.len());
                let mut mse = Vec::with_capacity(models.len());
                for m in models {
                    let p = m.predict(z)?;
                    mean.push(p.mean);
                    mse.push(p.variance);
                }
                Ok((mean, mse))
            }
            Emulator::Exact(f) => {
                let h = f.evaluate(z)?;
                let zeros = vec![0.0; h.len()];
                Ok((h, zeros))
            }
        }
    }

    /// `−½ Σ_j [log(R_j + MSE_j) + (y_j − Ĥ_j)²/(R_j + MSE_j)]` for one
    /// observation at latent value `x`.
    pub(crate) fn data_term(&self, obs: &ObservationSet, i: usize, x: &[f64]) -> Result<f64> {
        let (mean, mse) = self.predict(&obs.input(i, x))?;
        let mut acc = 0.0;
        for j in 0..obs.p() {
            let v = obs.r[j] + mse[j];
            let r = obs.y[i][j] - mean[j];
            acc += v.ln() + r * r / v;
        }
        Ok(-0.5 * acc)
    }

    /// Upper bound of [`Self::data_term`] over every admissible value of the
    /// MSE, computed from the predictive mean and a cheap MSE upper bound.
    pub(crate) fn data_term_bound(&self, obs: &ObservationSet, i: usize, x: &[f64]) -> Result<f64> {
        let z = obs.input(i, x);
        let mut acc = 0.0;
        for j in 0..obs.p() {
            let (mean, hi) = match &self.emulator {
                Emulator::Kriging(models) => models[j].mean_and_variance_bound(&z),
                Emulator::Exact(f) => (f.evaluate(&z)?[j], 0.0),
            };
            let r2 = (obs.y[i][j] - mean).powi(2);
            // −½(log v + r²/v) is maximal at v = r² on [R, R + bound]
            let v = r2.clamp(obs.r[j], obs.r[j] + hi);
            acc += v.ln() + r2 / v;
        }
        Ok(-0.5 * acc)
    }

    /// Joint means and kriging covariance of output `j` at the given inputs.
    fn joint(&self, j: usize, inputs: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match &self.emulator {
            Emulator::Kriging(models) => models[j].joint(inputs),
            Emulator::Exact(f) => {
                let mut mean = DVector::zeros(inputs.len());
                for (k, z) in inputs.iter().enumerate() {
                    mean[k] = f.evaluate(z)?[j];
                }
                Ok((mean, DMatrix::zeros(inputs.len(), inputs.len())))
            }
        }
    }
}

/// `−½ (x−m)ᵀ C⁻¹ (x−m)` from the Cholesky factor of `C`.
pub(crate) fn prior_quadratic(x: &[f64], m: &DVector<f64>, c_chol: &DMatrix<f64>) -> f64 {
    let r = DVector::from_column_slice(x) - m;
    -0.5 * linalg::solve_lower(c_chol, &r).norm_squared()
}

pub(crate) fn c_factor(theta: &Theta) -> Result<DMatrix<f64>> {
    linalg::cholesky_lower(&theta.c).ok_or_else(|| Error::Numerical("C is not positive definite".into()))
}

/// Unnormalized `log π(X | m, C, y, d)`:
/// `−½log|𝐑+MSE| − ½Σᵢ(Xᵢ−m)ᵀC⁻¹(Xᵢ−m) − ½(y−Ĥ)ᵀ(𝐑+MSE)⁻¹(y−Ĥ)`,
/// or `−∞` when some `Xᵢ` leaves the support.
pub fn log_missing_conditional(
    xs: &[DVector<f64>],
    theta: &Theta,
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
) -> Result<f64> {
    check_dim(obs.n(), xs.len())?;
    check_dim(obs.p(), ctx.output_dim())?;
    if xs.iter().any(|x| !ctx.in_support(x.as_slice())) {
        return Ok(f64::NEG_INFINITY);
    }
    let l = c_factor(theta)?;
    let mut total: f64 = xs.iter().map(|x| prior_quadratic(x.as_slice(), &theta.m, &l)).sum();
    if ctx.cross_covariance {
        let inputs: Vec<Vec<f64>> = xs.iter().enumerate().map(|(i, x)| obs.input(i, x.as_slice())).collect();
        for j in 0..obs.p() {
            let (mean, mut cov) = ctx.joint(j, &inputs)?;
            for i in 0..obs.n() {
                cov[(i, i)] += obs.r[j];
            }
            let resid = DVector::from_iterator(obs.n(), (0..obs.n()).map(|i| obs.y[i][j] - mean[i]));
            total += dense_log_density(&resid, &cov)?;
        }
    } else {
        for (i, x) in xs.iter().enumerate() {
            total += ctx.data_term(obs, i, x.as_slice())?;
        }
    }
    Ok(total)
}

/// Stacking order of the `np` residuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockOrdering {
    /// `(y₁₁..y_n1, y₁₂..y_n2, …)`: one `n×n` block per output component.
    ByOutput,
    /// `(y₁₁..y₁p, y₂₁..y₂p, …)`
    ByObservation,
}

/// Residual vector `y − Ĥ` and the full `np×np` matrix `𝐑 + MSE`.
pub fn assemble_block_system(
    xs: &[DVector<f64>],
    ctx: &LikelihoodContext,
    obs: &ObservationSet,
    ordering: BlockOrdering,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = (obs.n(), obs.p());
    check_dim(n, xs.len())?;
    let inputs: Vec<Vec<f64>> = xs.iter().enumerate().map(|(i, x)| obs.input(i, x.as_slice())).collect();
    let index = |i: usize, j: usize| match ordering {
        BlockOrdering::ByOutput => j * n + i,
        BlockOrdering::ByObservation => i * p + j,
    };
    let mut resid = DVector::zeros(n * p);
    let mut mat = DMatrix::zeros(n * p, n * p);
    for j in 0..p {
        let (mean, cov) = ctx.joint(j, &inputs)?;
        for i in 0..n {
            resid[index(i, j)] = obs.y[i][j] - mean[i];
            mat[(index(i, j), index(i, j))] = obs.r[j] + cov[(i, i)];
            if ctx.cross_covariance {
                for k in 0..n {
                    if k != i {
                        mat[(index(i, j), index(k, j))] = cov[(i, k)];
                    }
                }
            }
        }
    }
    Ok((resid, mat))
}

/// `−½log|S| − ½ rᵀS⁻¹r`.
pub fn dense_log_density(resid: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let l = linalg::cholesky_lower(cov)
        .ok_or_else(|| Error::Numerical("𝐑 + MSE is not positive definite".into()))?;
    let w = linalg::solve_lower(&l, resid);
    Ok(-0.5 * linalg::log_det_from_factor(&l) - 0.5 * w.norm_squared())
}
