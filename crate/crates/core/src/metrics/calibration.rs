use crate::{Error, Result};

pub const ECE_BINS: usize = 10;

/// `1 − H / ln n`; a single entity is fully confident.
pub fn confidence_from_entropy(entropy: f64, n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    (1.0 - entropy / (n as f64).ln()).clamp(0.0, 1.0)
}

/// Expected calibration error over `bins` equal-width bins on [0, 1]:
/// `Σ_b (n_b / n) · |acc_b − conf_b|`. Confidence 1 falls in the top bin;
/// empty bins contribute nothing.
pub fn ece(confidences: &[f64], outcomes: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != outcomes.len() {
        return Err(Error::DimensionMismatch {
            context: "calibration outcomes",
            expected: confidences.len(),
            actual: outcomes.len(),
        });
    }
    if bins == 0 || confidences.is_empty() {
        return Err(Error::InvalidArgument("calibration needs samples and at least one bin".into()));
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidArgument("confidences must lie in [0, 1]".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (c, y) in confidences.iter().zip(outcomes) {
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(*y);
    }
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let k = count[b] as f64;
        total += (k / n) * (hits[b] as f64 / k - conf_sum[b] / k).abs();
    }
    Ok(total)
}
