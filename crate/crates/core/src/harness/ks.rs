use libm::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// the standard normal CDF.
pub fn ks_normal(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("ks_normal of an empty sample".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("ks_normal sample contains NaN".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = normal_cdf(x);
        let above = (i + 1) as f64 / m - cdf;
        let below = cdf - i as f64 / m;
        d = d.max(above).max(below);
    }
    Ok(d)
}
