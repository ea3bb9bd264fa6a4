use super::kernel::{Kernel, TrendBasis};
use super::model::{KrigingModel, Scaling};
use crate::error::{Error, Result};

/// Leave-one-out predictivity `Q2 = 1 − PRESS / Σ(h_i − h̄)²` for a scalar
/// output, with the kernel held fixed and only β and the conditioning
/// recomputed for every held-out point.
pub fn q2_loocv(
    points: &[Vec<f64>],
    observations: &[f64],
    trend: TrendBasis,
    kernel: &Kernel,
    scaling: &Scaling,
) -> Result<f64> {
    let model = KrigingModel::condition(points, observations, trend, kernel.clone(), scaling.clone())?;
    q2_of_models(std::slice::from_ref(&model))
}

/// Vector-output Q2 over independently kriged components sharing a design:
/// squared errors are summed over components.
pub fn q2_of_models(models: &[KrigingModel]) -> Result<f64> {
    let Some(first) = models.first() else {
        return Err(Error::Argument("no models".into()));
    };
    let n = first.len();
    let k = first.trend().len(first.dim());
    if n < k + 2 {
        return Err(Error::Argument(format!(
            "leave-one-out needs at least {} points, got {n}",
            k + 2
        )));
    }
    let mut press = 0.0;
    let mut spread = 0.0;
    for model in models {
        let obs = model.observations();
        let pts = model.points();
        let mean = obs.iter().sum::<f64>() / n as f64;
        spread += obs.iter().map(|h| (h - mean).powi(2)).sum::<f64>();
        for i in 0..n {
            let loo = model.leave_one_out(i)?;
            let pred = loo.predict(&pts[i])?.mean;
            press += (obs[i] - pred).powi(2);
        }
    }
    if spread <= 0.0 {
        return Err(Error::UndefinedQ2);
    }
    Ok(1.0 - press / spread)
}

/// Q2 from precomputed leave-one-out predictions.
pub fn q2_from_predictions(observed: &[f64], loo_predictions: &[f64]) -> Result<f64> {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let spread: f64 = observed.iter().map(|h| (h - mean).powi(2)).sum();
    if spread <= 0.0 {
        return Err(Error::UndefinedQ2);
    }
    let press: f64 = observed
        .iter()
        .zip(loo_predictions)
        .map(|(h, p)| (h - p).powi(2))
        .sum();
    Ok(1.0 - press / spread)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_mean_predictors() {
        let h = [1.0, 2.0, 4.0, 3.0];
        assert_eq!(q2_from_predictions(&h, &h).unwrap(), 1.0);
        let mean = [2.5; 4];
        assert!(q2_from_predictions(&h, &mean).unwrap().abs() < 1e-15);
    }

    #[test]
    fn constant_observations_undefined() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let k = Kernel::squared_exponential(1.0, vec![0.3]).unwrap();
        let r = q2_loocv(&pts, &[2.0; 5], TrendBasis::Constant, &k, &Scaling::identity(1));
        assert!(matches!(r, Err(Error::UndefinedQ2)));
    }

    #[test]
    fn linear_data_with_linear_trend_is_perfect() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
        let obs: Vec<f64> = pts.iter().map(|z| 3.0 * z[0] - 1.0).collect();
        let k = Kernel::squared_exponential(1.0, vec![0.3]).unwrap();
        let q2 = q2_loocv(&pts, &obs, TrendBasis::Linear, &k, &Scaling::identity(1)).unwrap();
        assert!((q2 - 1.0).abs() < 1e-8, "{q2}");
    }
}
