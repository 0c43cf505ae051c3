use crate::{Error, Result};

/// Shannon entropy `-Σ p ln p` of an action distribution, with `0 ln 0 = 0`.
pub fn entropy_uncertainty(dist: &[f64]) -> Result<f64> {
    if let Some(p) = dist.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::Input(format!("probability {p} is negative or NaN")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("probabilities sum to {total}, not 1")));
    }
    Ok(-dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

/// Mean over action dimensions of the across-member population variance.
pub fn ensemble_variance(predictions: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() < 2 {
        return Err(Error::Input(format!("ensemble variance needs >= 2 members, got {}", predictions.len())));
    }
    let dims = predictions[0].len();
    if dims == 0 || predictions.iter().any(|p| p.len() != dims) {
        return Err(Error::Input("ensemble members disagree on action arity".into()));
    }
    let b = predictions.len() as f64;
    let total: f64 = (0..dims)
        .map(|k| {
            let mean = predictions.iter().map(|p| p[k]).sum::<f64>() / b;
            predictions.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / b
        })
        .sum();
    Ok(total / dims as f64)
}
