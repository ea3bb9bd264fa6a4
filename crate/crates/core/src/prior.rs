//! Gaussian–Inverse-Wishart prior on θ = (m, C).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Parameters of the latent input distribution `X ~ N_q(m, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Theta {
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl Theta {
    pub fn new(m: DVector<f64>, c: DMatrix<f64>) -> Result<Self> {
        check_dim(m.len(), c.nrows())?;
        check_dim(m.len(), c.ncols())?;
        if !linalg::is_spd(&c) || (&c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
            return Err(Error::Argument("C must be symmetric positive definite".into()));
        }
        Ok(Theta { m, c })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// `(m₁..m_q, C₁₁..C_qq)`: the vector on which divergences are estimated.
    pub fn mean_and_variances(&self) -> Vec<f64> {
        self.m.iter().copied().chain(self.c.diagonal().iter().copied()).collect()
    }

    /// `(m₁..m_q, C₁₁, C₁₂, …, C_qq)` with the upper triangle row by row.
    pub fn to_flat(&self) -> Vec<f64> {
        let q = self.dim();
        let mut out: Vec<f64> = self.m.iter().copied().collect();
        for i in 0..q {
            for j in i..q {
                out.push(self.c[(i, j)]);
            }
        }
        out
    }

    pub fn from_flat(q: usize, flat: &[f64]) -> Result<Theta> {
        check_dim(q + q * (q + 1) / 2, flat.len())?;
        let m = DVector::from_column_slice(&flat[..q]);
        let mut c = DMatrix::zeros(q, q);
        let mut k = q;
        for i in 0..q {
            for j in i..q {
                c[(i, j)] = flat[k];
                c[(j, i)] = flat[k];
                k += 1;
            }
        }
        Theta::new(m, c)
    }
}

/// Hyperparameters `(μ, a, Λ, ν)`, optionally with the elicitation surface
/// `C_e` they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorHyper {
    pub mu: DVector<f64>,
    pub a: f64,
    pub lambda: DMatrix<f64>,
    pub nu: f64,
    pub c_e: Option<DMatrix<f64>>,
}

impl PriorHyper {
    pub fn new(mu: DVector<f64>, a: f64, lambda: DMatrix<f64>, nu: f64) -> Result<Self> {
        let q = mu.len();
        check_dim(q, lambda.nrows())?;
        check_dim(q, lambda.ncols())?;
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Argument(format!("virtual size a must be > 0, got {a}")));
        }
        if !(nu > q as f64 + 1.0) {
            return Err(Error::Argument(format!("ν must exceed q+1 = {}, got {nu}", q + 1)));
        }
        if !linalg::is_spd(&lambda) {
            return Err(Error::Argument("Λ must be symmetric positive definite".into()));
        }
        Ok(PriorHyper {
            mu,
            a,
            lambda,
            nu,
            c_e: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `E[C] = Λ/(ν − q − 1)`.
    pub fn mean_c(&self) -> DMatrix<f64> {
        &self.lambda / (self.nu - self.dim() as f64 - 1.0)
    }
}

/// Builds the prior from a prior guess `μ` of the inputs, an elicited
/// covariance `C_e` and the virtual sample size `a`:
/// `Λ = (a+1)·C_e`, `ν = a + q + 2`.
pub fn elicit_prior(mu: DVector<f64>, c_e: DMatrix<f64>, a: f64) -> Result<PriorHyper> {
    let q = mu.len();
    check_dim(q, c_e.nrows())?;
    check_dim(q, c_e.ncols())?;
    if !linalg::is_spd(&c_e) {
        return Err(Error::Argument("C_e must be symmetric positive definite".into()));
    }
    let mut hyper = PriorHyper::new(mu, a, &c_e * (a + 1.0), a + q as f64 + 2.0)?;
    hyper.c_e = Some(c_e);
    Ok(hyper)
}

/// Draws `C ~ IW_q(Ψ, dof)`.
///
/// With `Ψ = U Uᵀ` and the Bartlett factor `A` of a `W_q(I, dof)` draw,
/// `W = U⁻ᵀ A Aᵀ U⁻¹ ~ W_q(Ψ⁻¹, dof)` and `C = W⁻¹ = (U A⁻ᵀ)(U A⁻ᵀ)ᵀ`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let q = scale.nrows();
    if !(dof > q as f64 - 1.0) {
        return Err(Error::Argument(format!("IW degrees of freedom {dof} ≤ q − 1")));
    }
    let u = linalg::cholesky_lower(scale)
        .ok_or_else(|| Error::Numerical("inverse-Wishart scale is not SPD".into()))?;
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let a_inv = linalg::solve_lower_mat(&a, &DMatrix::identity(q, q));
    let b = u * a_inv.transpose();
    let mut c = &b * b.transpose();
    linalg::symmetrize(&mut c);
    Ok(c)
}

/// `IW(Ψ, dof)` mean `Ψ/(dof − q − 1)`.
pub fn inverse_wishart_mean(scale: &DMatrix<f64>, dof: f64) -> DMatrix<f64> {
    scale / (dof - scale.nrows() as f64 - 1.0)
}

pub fn sample_prior<R: Rng + ?Sized>(hyper: &PriorHyper, rng: &mut R) -> Result<Theta> {
    let c = sample_inverse_wishart(&hyper.lambda, hyper.nu, rng)?;
    let m = sample_mean_given_c(&hyper.mu, &c, hyper.a, rng)?;
    Ok(Theta { m, c })
}

/// `m ~ N(center, C/weight)`.
pub(crate) fn sample_mean_given_c<R: Rng + ?Sized>(
    center: &DVector<f64>,
    c: &DMatrix<f64>,
    weight: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let l = linalg::cholesky_lower(c)
        .ok_or_else(|| Error::Numerical("covariance draw is not SPD".into()))?;
    let z = linalg::standard_normal_vector(center.len(), rng);
    Ok(center + (l * z) / weight.sqrt())
}

/// Multivariate Student-t: `location + L z / sqrt(χ²_dof/dof)` with `L Lᵀ = scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentT {
    pub location: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl StudentT {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.scale * (self.dof / (self.dof - 2.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let l = linalg::cholesky_lower(&self.scale)
            .ok_or_else(|| Error::Numerical("Student scale is not SPD".into()))?;
        let chi = ChiSquared::new(self.dof).map_err(|e| Error::Numerical(e.to_string()))?;
        let g = (chi.sample(rng) / self.dof).sqrt();
        let z = linalg::standard_normal_vector(self.location.len(), rng);
        Ok(&self.location + l * z / g)
    }
}

/// Prior predictive law of `X`: Student-t with location `μ`, scale
/// `(a+1)²/(a(a+3))·C_e` and `a+3` degrees of freedom.
pub fn prior_predictive_params(hyper: &PriorHyper) -> Result<StudentT> {
    let c_e = hyper.c_e.as_ref().ok_or(Error::Elicitation)?;
    let a = hyper.a;
    Ok(StudentT {
        location: hyper.mu.clone(),
        scale: c_e * ((a + 1.0).powi(2) / (a * (a + 3.0))),
        dof: a + 3.0,
    })
}

/// Variance of the Strickler coefficient `X = 1/M` given its mean and the
/// standard deviation of the Manning coefficient: `σ² ≈ μ⁴σ_M²`.
pub fn manning_variance_transfer(mu_strickler: f64, sigma_manning: f64) -> Result<f64> {
    if !(mu_strickler > 0.0) {
        return Err(Error::Argument("Strickler mean must be > 0".into()));
    }
    if !(sigma_manning >= 0.0) {
        return Err(Error::Argument("Manning standard deviation must be ≥ 0".into()));
    }
    Ok(mu_strickler.powi(4) * sigma_manning * sigma_manning)
}

/// Scale of the `C | m, X` full conditional used by the sampler:
/// `Λ + Σᵢ(m−Xᵢ)(m−Xᵢ)ᵀ + a(m−μ)(m−μ)ᵀ` (degrees of freedom `ν+n+1`).
pub fn conditional_c_scale(hyper: &PriorHyper, m: &DVector<f64>, xs: &[DVector<f64>]) -> DMatrix<f64> {
    let mut s = hyper.lambda.clone();
    for x in xs {
        let r = m - x;
        s += &r * r.transpose();
    }
    let r = m - &hyper.mu;
    s += (&r * r.transpose()) * hyper.a;
    linalg::symmetrize(&mut s);
    s
}

/// The `C | m, X` scale in the form `(a+1)C_e + (n+1)Ĉ_n` with
/// `Ĉ_n = (1/n)Σᵢ(m−xᵢ)(m−xᵢ)ᵀ`.
pub fn elicited_conditional_c_scale(
    hyper: &PriorHyper,
    m: &DVector<f64>,
    xs: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let c_e = hyper.c_e.as_ref().ok_or(Error::Elicitation)?;
    let n = xs.len();
    let mut c_hat = DMatrix::zeros(m.len(), m.len());
    if n > 0 {
        for x in xs {
            let r = m - x;
            c_hat += &r * r.transpose();
        }
        c_hat /= n as f64;
    }
    Ok(c_e * (hyper.a + 1.0) + c_hat * (n as f64 + 1.0))
}

/// Exact Normal–Inverse-Wishart posterior of `θ` given complete data `X`.
#[derive(Clone, Debug)]
pub struct NiwPosterior {
    pub mu: DVector<f64>,
    pub kappa: f64,
    pub lambda: DMatrix<f64>,
    pub nu: f64,
}

impl NiwPosterior {
    pub fn from_data(hyper: &PriorHyper, xs: &[DVector<f64>]) -> NiwPosterior {
        let q = hyper.dim();
        let n = xs.len() as f64;
        if xs.is_empty() {
            return NiwPosterior {
                mu: hyper.mu.clone(),
                kappa: hyper.a,
                lambda: hyper.lambda.clone(),
                nu: hyper.nu,
            };
        }
        let mut mean = DVector::zeros(q);
        for x in xs {
            mean += x;
        }
        mean /= n;
        let mut s = DMatrix::zeros(q, q);
        for x in xs {
            let r = x - &mean;
            s += &r * r.transpose();
        }
        let shift = &mean - &hyper.mu;
        let mut lambda = &hyper.lambda + s + (&shift * shift.transpose()) * (hyper.a * n / (hyper.a + n));
        linalg::symmetrize(&mut lambda);
        NiwPosterior {
            mu: (&hyper.mu * hyper.a + mean * n) / (hyper.a + n),
            kappa: hyper.a + n,
            lambda,
            nu: hyper.nu + n,
        }
    }

    pub fn mean_c(&self) -> DMatrix<f64> {
        inverse_wishart_mean(&self.lambda, self.nu)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Theta> {
        let c = sample_inverse_wishart(&self.lambda, self.nu, rng)?;
        let m = sample_mean_given_c(&self.mu, &c, self.kappa, rng)?;
        Ok(Theta { m, c })
    }
}
