//! Contrastive grounding loss: InfoNCE over cosine similarities.

use crate::linalg::{dot, log_sum_exp, norm, softmax};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GacOutput {
    pub loss: f64,
    pub d_query: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Gradient of `cos(a, b)` with respect to `a`, scaled by `w`.
fn cosine_grad_into(out: &mut [f64], w: f64, a: &[f64], b: &[f64]) {
    let (na, nb) = (norm(a), norm(b));
    let c = dot(a, b) / (na * nb);
    for ((o, ai), bi) in out.iter_mut().zip(a).zip(b) {
        *o += w * (bi / (na * nb) - c * ai / (na * na));
    }
}

/// `−ln softmax(sim/τ)` at the positive, with the positive among `1 + |negatives|`
/// candidates, plus analytic gradients for every input vector.
pub fn gac_loss(query: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<GacOutput> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if negatives.is_empty() {
        return Err(Error::InvalidArgument("contrastive loss needs at least one negative".into()));
    }
    for v in std::iter::once(positive).chain(negatives.iter().map(Vec::as_slice)) {
        if v.len() != query.len() {
            return Err(Error::DimensionMismatch {
                context: "contrastive key",
                expected: query.len(),
                actual: v.len(),
            });
        }
    }
    let keys: Vec<&[f64]> = std::iter::once(positive).chain(negatives.iter().map(Vec::as_slice)).collect();
    let scores = keys
        .iter()
        .map(|k| cosine(query, k).map(|c| c / tau))
        .collect::<Result<Vec<f64>>>()?;
    let loss = log_sum_exp(&scores) - scores[0];
    let p = softmax(&scores);

    let mut d_query = vec![0.0; query.len()];
    let mut d_keys = Vec::with_capacity(keys.len());
    for (j, k) in keys.iter().enumerate() {
        let w = (p[j] - if j == 0 { 1.0 } else { 0.0 }) / tau;
        cosine_grad_into(&mut d_query, w, query, k);
        let mut dk = vec![0.0; k.len()];
        cosine_grad_into(&mut dk, w, k, query);
        d_keys.push(dk);
    }
    let d_positive = d_keys.remove(0);
    Ok(GacOutput {
        loss,
        d_query,
        d_positive,
        d_negatives: d_keys,
    })
}
