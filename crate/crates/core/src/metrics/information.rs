use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::ACTION_DIM;
use crate::{Error, Result};

/// Entropy in nats of the empirical distribution given by `counts`.
pub fn plugin_entropy<'a>(counts: impl IntoIterator<Item = &'a usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().copied().filter(|c| *c > 0).collect();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts.iter().map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

fn entropy_of<K: Ord>(keys: impl Iterator<Item = K>) -> f64 {
    let mut counts = BTreeMap::new();
    for k in keys {
        *counts.entry(k).or_insert(0usize) += 1;
    }
    plugin_entropy(counts.values())
}

/// Plug-in `I(X; Y)` in nats over the empirical joint of the samples.
pub fn mutual_information<X: Ord + Clone, Y: Ord + Clone>(samples: &[(X, Y)]) -> f64 {
    let hx = entropy_of(samples.iter().map(|(x, _)| x.clone()));
    let hy = entropy_of(samples.iter().map(|(_, y)| y.clone()));
    let hxy = entropy_of(samples.iter().cloned());
    (hx + hy - hxy).max(0.0)
}

/// Plug-in `I(X; Y | Z) = H(X,Z) + H(Y,Z) − H(X,Y,Z) − H(Z)` in nats.
pub fn conditional_mutual_information<X, Y, Z>(samples: &[(X, Y, Z)]) -> f64
where
    X: Ord + Clone,
    Y: Ord + Clone,
    Z: Ord + Clone,
{
    let hxz = entropy_of(samples.iter().map(|(x, _, z)| (x.clone(), z.clone())));
    let hyz = entropy_of(samples.iter().map(|(_, y, z)| (y.clone(), z.clone())));
    let hxyz = entropy_of(samples.iter().cloned());
    let hz = entropy_of(samples.iter().map(|(_, _, z)| z.clone()));
    (hxz + hyz - hxyz - hz).max(0.0)
}

/// An action as recorded for information estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionObservation {
    Quantized(Vec<i64>),
    Continuous(Vec<f64>),
}

/// Bins each normalized displacement component of `[-1, 1]` into `bins`
/// equal cells and the grip into closed/open.
pub fn quantize_action(normalized: &[f64; ACTION_DIM], bins: usize) -> ActionObservation {
    let mut cells: Vec<i64> = normalized[..3]
        .iter()
        .map(|v| {
            let u = (v.clamp(-1.0, 1.0) + 1.0) / 2.0;
            ((u * bins as f64) as i64).min(bins as i64 - 1)
        })
        .collect();
    cells.push(i64::from(normalized[3] >= 0.5));
    ActionObservation::Quantized(cells)
}

/// One action taken under instruction `instruction` in context `context`
/// (observation and robot state held fixed within a context).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTrace {
    pub context: u64,
    pub instruction: usize,
    pub action: ActionObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageInfluenceEstimate {
    pub mi_nats: f64,
    pub lambda_index: f64,
    pub instruction_space_size: usize,
}

/// Plug-in `I(L; a | O, q)` and the index `Λ = 1 − I / ln |L|`.
pub fn language_influence(traces: &[InfluenceTrace], instruction_space_size: usize) -> Result<LanguageInfluenceEstimate> {
    if instruction_space_size < 2 {
        return Err(Error::InvalidArgument("instruction space needs at least two entries".into()));
    }
    let mut samples = Vec::with_capacity(traces.len());
    for t in traces {
        match &t.action {
            ActionObservation::Quantized(a) => samples.push((t.instruction, a.clone(), t.context)),
            ActionObservation::Continuous(_) => return Err(Error::Unquantized),
        }
    }
    let mi = conditional_mutual_information(&samples);
    Ok(LanguageInfluenceEstimate {
        mi_nats: mi,
        lambda_index: (1.0 - mi / (instruction_space_size as f64).ln()).clamp(0.0, 1.0),
        instruction_space_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(context: u64, instruction: usize, cell: i64) -> InfluenceTrace {
        InfluenceTrace {
            context,
            instruction,
            action: ActionObservation::Quantized(vec![cell]),
        }
    }

    #[test]
    fn independent_actions_have_zero_influence() {
        let traces: Vec<_> = (0..4).map(|i| trace(0, i, 2)).collect();
        let est = language_influence(&traces, 4).unwrap();
        assert_eq!(est.mi_nats, 0.0);
        assert_eq!(est.lambda_index, 1.0);
    }

    #[test]
    fn bijective_actions_have_full_influence() {
        let traces: Vec<_> = (0..4).map(|i| trace(0, i, i as i64)).collect();
        let est = language_influence(&traces, 4).unwrap();
        assert!((est.mi_nats - 4f64.ln()).abs() < 1e-12);
        assert!(est.lambda_index.abs() < 1e-12);
    }

    #[test]
    fn continuous_actions_rejected() {
        let t = InfluenceTrace {
            context: 0,
            instruction: 0,
            action: ActionObservation::Continuous(vec![0.1]),
        };
        assert!(matches!(language_influence(&[t], 2), Err(Error::Unquantized)));
    }

    #[test]
    fn quantization_grid() {
        let ActionObservation::Quantized(q) = quantize_action(&[-1.0, 0.0, 1.0, 0.7], 5) else {
            unreachable!()
        };
        assert_eq!(q, vec![0, 2, 4, 1]);
    }
}
