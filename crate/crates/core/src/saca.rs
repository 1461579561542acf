//! Single-head cross-attention from the symbolic sub-goal (query) to the
//! entity set (keys and values).

use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gsm::{EntitySet, ENTITY_ROW_DIM};
use crate::linalg::{dot, softmax, Matrix};
use crate::{Error, Result};

pub const ATTENTION_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacaParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl SacaParams {
    pub fn zeros(query_dim: usize, d: usize) -> Self {
        Self {
            w_q: Matrix::zeros(d, query_dim),
            w_k: Matrix::zeros(d, ENTITY_ROW_DIM),
            w_v: Matrix::zeros(d, ENTITY_ROW_DIM),
        }
    }

    pub fn random<R: Rng + ?Sized>(query_dim: usize, d: usize, std: f64, rng: &mut R) -> Self {
        Self {
            w_q: Matrix::random(d, query_dim, std, rng),
            w_k: Matrix::random(d, ENTITY_ROW_DIM, std, rng),
            w_v: Matrix::random(d, ENTITY_ROW_DIM, std, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.query_dim(), self.d())
    }

    pub fn d(&self) -> usize {
        self.w_q.rows()
    }

    pub fn query_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        for (context, m) in [("w_k rows", &self.w_k), ("w_v rows", &self.w_v)] {
            if m.rows() != d {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: d,
                    actual: m.rows(),
                });
            }
        }
        if !(self.w_q.is_finite() && self.w_k.is_finite() && self.w_v.is_finite()) {
            return Err(Error::NonFinite("attention parameters"));
        }
        Ok(())
    }

    pub fn query(&self, subgoal_features: &[f64]) -> Vec<f64> {
        self.w_q.matvec(subgoal_features)
    }

    pub fn key(&self, row: &[f64]) -> Vec<f64> {
        self.w_k.matvec(row)
    }

    /// Hash of every parameter bit; ties a cache to the parameters that built it.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for m in [&self.w_q, &self.w_k, &self.w_v] {
            m.rows().hash(&mut h);
            for v in m.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedGoal {
    pub g: Vec<f64>,
    pub alpha: Vec<f64>,
    pub entropy: f64,
    pub argmax_entity: u32,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacaCache {
    fingerprint: u64,
    pub subgoal: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

/// Gradients with respect to the forward inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SacaInputGrads {
    pub d_subgoal: Vec<f64>,
    pub d_rows: Vec<Vec<f64>>,
}

pub fn saca_forward(subgoal_features: &[f64], entities: &EntitySet, params: &SacaParams) -> Result<VerifiedGoal> {
    saca_forward_cached(subgoal_features, entities, params).map(|(goal, _)| goal)
}

pub fn saca_forward_cached(
    subgoal_features: &[f64],
    entities: &EntitySet,
    params: &SacaParams,
) -> Result<(VerifiedGoal, SacaCache)> {
    let rows: Vec<Vec<f64>> = entities.embeddings.iter_rows().map(<[f64]>::to_vec).collect();
    let ids = entities.ids();
    saca_forward_rows(subgoal_features, &rows, &ids, params)
}

/// Attention over explicit rows and ids; used when candidate rows are not
/// backed by a scene (retrieval pools, patch ablation).
pub fn saca_forward_rows(
    subgoal_features: &[f64],
    rows: &[Vec<f64>],
    ids: &[u32],
    params: &SacaParams,
) -> Result<(VerifiedGoal, SacaCache)> {
    if rows.is_empty() {
        return Err(Error::EmptyEntities);
    }
    if subgoal_features.len() != params.query_dim() {
        return Err(Error::DimensionMismatch {
            context: "sub-goal features",
            expected: params.query_dim(),
            actual: subgoal_features.len(),
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != params.w_k.cols()) {
        return Err(Error::DimensionMismatch {
            context: "entity row",
            expected: params.w_k.cols(),
            actual: bad.len(),
        });
    }
    let scale = (params.d() as f64).sqrt();
    let query = params.query(subgoal_features);
    let keys: Vec<Vec<f64>> = rows.iter().map(|r| params.w_k.matvec(r)).collect();
    let values: Vec<Vec<f64>> = rows.iter().map(|r| params.w_v.matvec(r)).collect();
    let logits: Vec<f64> = keys.iter().map(|k| dot(&query, k) / scale).collect();
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("attention logits"));
    }
    let alpha = softmax(&logits);
    let mut g = vec![0.0; params.d()];
    for (a, v) in alpha.iter().zip(&values) {
        for (gi, vi) in g.iter_mut().zip(v) {
            *gi += a * vi;
        }
    }
    let entropy = attention_entropy(&alpha)?;
    let argmax_entity = argmax_lowest_id(&alpha, ids);
    let goal = VerifiedGoal {
        g,
        alpha: alpha.clone(),
        entropy,
        argmax_entity,
        logits,
    };
    let cache = SacaCache {
        fingerprint: params.fingerprint(),
        subgoal: subgoal_features.to_vec(),
        rows: rows.to_vec(),
        query,
        keys,
        values,
        alpha,
    };
    Ok((goal, cache))
}

fn argmax_lowest_id(alpha: &[f64], ids: &[u32]) -> u32 {
    let mut best = 0;
    for i in 1..alpha.len() {
        if alpha[i] > alpha[best] || (alpha[i] == alpha[best] && ids[i] < ids[best]) {
            best = i;
        }
    }
    ids[best]
}

/// Backpropagates `∂L/∂g`, accumulating parameter gradients into `grad`.
pub fn saca_backward(
    params: &SacaParams,
    cache: &SacaCache,
    d_g: &[f64],
    grad: &mut SacaParams,
) -> Result<SacaInputGrads> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache);
    }
    if d_g.len() != params.d() {
        return Err(Error::DimensionMismatch {
            context: "upstream goal gradient",
            expected: params.d(),
            actual: d_g.len(),
        });
    }
    let scale = (params.d() as f64).sqrt();
    let d_alpha: Vec<f64> = cache.values.iter().map(|v| dot(d_g, v)).collect();
    let mean = dot(&cache.alpha, &d_alpha);
    let dz: Vec<f64> = cache.alpha.iter().zip(&d_alpha).map(|(a, d)| a * (d - mean)).collect();

    let mut d_query = vec![0.0; params.d()];
    let mut d_rows = Vec::with_capacity(cache.rows.len());
    for i in 0..cache.rows.len() {
        let row = &cache.rows[i];
        for (dq, k) in d_query.iter_mut().zip(&cache.keys[i]) {
            *dq += dz[i] * k / scale;
        }
        let d_key: Vec<f64> = cache.query.iter().map(|q| dz[i] * q / scale).collect();
        let d_value: Vec<f64> = d_g.iter().map(|d| cache.alpha[i] * d).collect();
        grad.w_k.add_outer(1.0, &d_key, row);
        grad.w_v.add_outer(1.0, &d_value, row);
        let mut d_row = params.w_k.matvec_t(&d_key);
        for (a, b) in d_row.iter_mut().zip(params.w_v.matvec_t(&d_value)) {
            *a += b;
        }
        d_rows.push(d_row);
    }
    grad.w_q.add_outer(1.0, &d_query, &cache.subgoal);
    Ok(SacaInputGrads {
        d_subgoal: params.w_q.matvec_t(&d_query),
        d_rows,
    })
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn attention_entropy(alpha: &[f64]) -> Result<f64> {
    let sum: f64 = alpha.iter().sum();
    if alpha.is_empty() || (sum - 1.0).abs() > 1e-9 || alpha.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::NotNormalized { sum });
    }
    let h: f64 = alpha.iter().filter(|a| **a > 0.0).map(|a| -a * a.ln()).sum();
    Ok(h.max(0.0))
}
