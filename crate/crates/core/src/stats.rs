//! Small statistics helpers: one-sided paired t-test and Pearson correlation.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One-sided paired Student t-test of `H1: mean(a − b) < 0`.
///
/// Zero-variance differences give `p = 0` when the mean difference is
/// negative and `p = 1` otherwise.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Invalid(format!("paired t-test needs at least 2 samples, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 || var.sqrt() <= 1e-12 * m.abs() {
        return Ok(if m < 0.0 { 0.0 } else { 1.0 });
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(dist.cdf(t))
}

/// Pearson correlation coefficient; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Invalid(format!(
            "correlation needs two equal-length samples of size ≥ 2 (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some(sab / (saa * sbb).sqrt()))
}
