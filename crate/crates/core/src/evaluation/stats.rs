use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_stdev(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// `(mean, 1.96 · s / √n)` under the normal approximation.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Degenerate(format!(
            "a confidence interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    let half = Z_95 * sample_stdev(values) / (values.len() as f64).sqrt();
    Ok((mean(values), half))
}
