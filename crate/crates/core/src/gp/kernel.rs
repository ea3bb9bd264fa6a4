use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Stationary correlation family `K(z−w)` with `K(0)=1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    SquaredExponential,
    Matern52,
}

/// Anisotropic stationary covariance `σ²·K(z−w) + τ²·[z=w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub variance: f64,
    pub length_scales: Vec<f64>,
    pub nugget: f64,
}

impl Kernel {
    pub fn new(
        family: KernelFamily,
        variance: f64,
        length_scales: Vec<f64>,
        nugget: f64,
    ) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Argument(format!("kernel variance must be > 0, got {variance}")));
        }
        if length_scales.is_empty() || length_scales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Argument(format!(
                "length-scales must be positive, got {length_scales:?}"
            )));
        }
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::Argument(format!("nugget must be ≥ 0, got {nugget}")));
        }
        Ok(Kernel {
            family,
            variance,
            length_scales,
            nugget,
        })
    }

    pub fn squared_exponential(variance: f64, length_scales: Vec<f64>) -> Result<Self> {
        Kernel::new(KernelFamily::SquaredExponential, variance, length_scales, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Covariance between `z` and `w`, checking dimensions.
    pub fn eval(&self, z: &[f64], w: &[f64]) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        check_dim(self.dim(), w.len())?;
        Ok(self.cov(z, w))
    }

    pub(crate) fn cov(&self, z: &[f64], w: &[f64]) -> f64 {
        let c = self.variance * self.correlation(z, w);
        if z == w {
            c + self.nugget
        } else {
            c
        }
    }

    /// Unit-variance correlation without nugget.
    pub fn correlation(&self, z: &[f64], w: &[f64]) -> f64 {
        let r2: f64 = z
            .iter()
            .zip(w)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let t = (a - b) / l;
                t * t
            })
            .sum();
        match self.family {
            KernelFamily::SquaredExponential => (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let r = (5.0 * r2).sqrt();
                (1.0 + r + r * r / 3.0) * (-r).exp()
            }
        }
    }
}

/// Linearly independent regression functions of the kriging trend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendBasis {
    /// Known zero mean (simple kriging on the scaled outputs).
    None,
    #[default]
    Constant,
    /// `1, z_1, …, z_Q`.
    Linear,
}

impl TrendBasis {
    pub fn len(&self, dim: usize) -> usize {
        match self {
            TrendBasis::None => 0,
            TrendBasis::Constant => 1,
            TrendBasis::Linear => 1 + dim,
        }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        match self {
            TrendBasis::None => Vec::new(),
            TrendBasis::Constant => vec![1.0],
            TrendBasis::Linear => std::iter::once(1.0).chain(z.iter().copied()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_variance_at_zero_lag() {
        let k = Kernel::squared_exponential(1.0, vec![0.3, 7.0]).unwrap();
        assert_eq!(k.eval(&[0.2, 0.1], &[0.2, 0.1]).unwrap(), 1.0);
        let k4 = Kernel::squared_exponential(4.0, vec![0.3]).unwrap();
        assert_eq!(k4.eval(&[0.5], &[0.5]).unwrap(), 4.0);
    }

    #[test]
    fn closed_form_value() {
        let k = Kernel::squared_exponential(1.0, vec![1.0]).unwrap();
        let v = k.eval(&[0.0], &[1.0]).unwrap();
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    #[test]
    fn nugget_only_on_the_diagonal() {
        let k = Kernel::new(KernelFamily::Matern52, 2.0, vec![0.5, 0.5], 0.1).unwrap();
        assert!((k.eval(&[0.1, 0.2], &[0.1, 0.2]).unwrap() - 2.1).abs() < 1e-15);
        let a = k.eval(&[0.1, 0.2], &[0.3, 0.4]).unwrap();
        let b = k.eval(&[0.3, 0.4], &[0.1, 0.2]).unwrap();
        assert_eq!(a, b);
        assert!(a < 2.0);
    }

    #[test]
    fn dimension_mismatch() {
        let k = Kernel::squared_exponential(1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn invalid_parameters() {
        assert!(Kernel::squared_exponential(0.0, vec![1.0]).is_err());
        assert!(Kernel::squared_exponential(1.0, vec![-1.0]).is_err());
        assert!(Kernel::new(KernelFamily::SquaredExponential, 1.0, vec![1.0], -1e-3).is_err());
    }
}
