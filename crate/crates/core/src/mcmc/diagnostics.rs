use crate::error::{Error, Result};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Potential scale reduction factor of `J ≥ 2` scalar traces of equal
/// length `T ≥ 10`:
/// `V̂ = (T−1)/T·W + (1 + 1/J)·B/T`, `R̂ = max(1, V̂/W)`.
pub fn brooks_gelman(chains: &[Vec<f64>]) -> Result<f64> {
    let j = chains.len();
    if j < 2 {
        return Err(Error::Argument("R̂ needs at least two chains".into()));
    }
    let t = chains[0].len();
    if t < 10 || chains.iter().any(|c| c.len() != t) {
        return Err(Error::Argument("R̂ needs equal-length traces of at least 10 draws".into()));
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / j as f64;
    if !(w > 0.0) {
        return Err(Error::DegenerateDiagnostic("zero within-chain variance".into()));
    }
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / j as f64;
    let b_over_t = stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (j - 1) as f64;
    let tf = t as f64;
    let v = (tf - 1.0) / tf * w + (1.0 + 1.0 / j as f64) * b_over_t;
    Ok((v / w).max(1.0))
}

/// Component-wise `R̂` of vector traces `traces[chain][iteration][component]`,
/// aggregated by the maximum.
pub fn brooks_gelman_multi(traces: &[Vec<Vec<f64>>]) -> Result<f64> {
    let dim = traces
        .first()
        .and_then(|c| c.first())
        .map(Vec::len)
        .ok_or_else(|| Error::Argument("empty traces".into()))?;
    let mut worst: f64 = 1.0;
    for k in 0..dim {
        let scalar: Vec<Vec<f64>> = traces.iter().map(|c| c.iter().map(|v| v[k]).collect()).collect();
        worst = worst.max(brooks_gelman(&scalar)?);
    }
    Ok(worst)
}
