use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cab_bench::{CabDataset, Split};
use crate::gsm::AttrBlock;
use crate::linalg::{log_sum_exp, norm};
use crate::metrics::mutual_information;
use crate::{Error, Result};

use super::data::TrainingSet;
use super::model::GroundingModel;

pub const BOUND_BATCH_SIZES: [usize; 3] = [4, 8, 16];

/// A held-out (sub-goal, entity) pair with its discrete labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundItem {
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub template: String,
    /// Attribute class of the entity: category · 8 + color · 2 + size.
    pub entity_class: usize,
}

fn entity_class(attr: &AttrBlock) -> usize {
    let c = attr.category().map_or(0, |c| c.index());
    let k = attr.color().map_or(0, |c| c.index());
    let s = attr.size().map_or(0, |s| s.index());
    c * 8 + k * 2 + s
}

/// One item per instruction of `split`; ambiguous instructions pair with a
/// referent drawn from `seed`.
pub fn bound_items(model: &GroundingModel, ds: &CabDataset, split: Split, seed: u64) -> Result<Vec<BoundItem>> {
    let (scenes, _, commands) = TrainingSet::commands_for(ds, split)?;
    let perceptions = scenes.iter().map(|s| model.perceive(s, None, 0)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(commands.len());
    for cmd in &commands {
        let id = cmd.referent_ids[rng.random_range(0..cmd.referent_ids.len())];
        let node = perceptions[cmd.scene_idx]
            .graph
            .nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or(Error::TrueEntityAbsent(id))?;
        items.push(BoundItem {
            query: model.saca.query(&model.query_features(&cmd.tokens, &cmd.subgoal)),
            key: model.saca.key(&node.row()),
            template: cmd.subgoal.canonical(),
            entity_class: entity_class(&node.attr),
        });
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Negatives drawn independently from the marginal over all items.
    Marginal,
    /// Negatives of pairwise distinct classes, all different from the positive's.
    DistinctClasses,
}

/// Mean and standard error of the N-candidate contrastive loss. `score(i, j)`
/// scores query `i` against key `j`; every item serves as the positive in
/// each of `passes` rounds.
pub fn infonce_estimate(
    n_items: usize,
    classes: &[usize],
    score: impl Fn(usize, usize) -> f64,
    n: usize,
    sampling: NegativeSampling,
    passes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArgument("contrastive batches need N ≥ 2".into()));
    }
    if n_items < n {
        return Err(Error::InsufficientEntities {
            needed: n,
            available: n_items,
        });
    }
    if sampling == NegativeSampling::DistinctClasses {
        let mut distinct = classes.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < n {
            return Err(Error::InsufficientEntities {
                needed: n,
                available: distinct.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(n_items * passes);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..passes {
        for i in 0..n_items {
            scores.clear();
            scores.push(score(i, i));
            let mut used = vec![classes[i]];
            while scores.len() < n {
                let j = rng.random_range(0..n_items);
                if sampling == NegativeSampling::DistinctClasses {
                    if used.contains(&classes[j]) {
                        continue;
                    }
                    used.push(classes[j]);
                }
                scores.push(score(i, j));
            }
            losses.push(log_sum_exp(&scores) - scores[0]);
        }
    }
    let m = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / m;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    Ok((mean, (var / m).sqrt()))
}

/// `E[ln(1 + X)]` with `X ~ Binomial(N − 1, 1/classes)`: the loss of a critic
/// that scores same-class keys infinitely above all others under marginal
/// negatives over uniform classes.
pub fn perfect_critic_expected_loss(n: usize, classes: usize) -> f64 {
    let p = 1.0 / classes as f64;
    let m = n - 1;
    let mut ln_binom = 0.0;
    let mut total = 0.0;
    for k in 0..=m {
        if k > 0 {
            ln_binom += ((m - k + 1) as f64).ln() - (k as f64).ln();
        }
        let ln_prob = ln_binom + k as f64 * p.ln() + (m - k) as f64 * (1.0 - p).ln();
        total += ln_prob.exp() * ((1 + k) as f64).ln();
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub n: usize,
    pub mean_loss: f64,
    pub standard_error: f64,
    /// `ln N − E[L]`.
    pub lower_bound: f64,
    /// Allowed estimator error: plug-in bias correction plus two standard errors.
    pub epsilon: f64,
    /// `I − (ln N − E[L])`.
    pub slack: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub pairs: usize,
    pub mi_plugin: f64,
    /// First-order bias of the plug-in estimate, `(K_SE − K_S − K_E + 1) / 2n`.
    pub mi_bias: f64,
    pub checks: Vec<BoundCheck>,
    pub all_satisfied: bool,
}

/// Compares `ln N − E[L]` against the plug-in `I(template; entity class)` for
/// each N, with negatives drawn from the marginal of the held-out items.
pub fn verify_infonce_bound(items: &[BoundItem], batch_sizes: &[usize], tau: f64, passes: usize, seed: u64) -> Result<BoundReport> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let joint: Vec<(String, usize)> = items.iter().map(|it| (it.template.clone(), it.entity_class)).collect();
    let mi = mutual_information(&joint);
    let cells = |f: &dyn Fn(&(String, usize)) -> String| {
        let mut v: Vec<String> = joint.iter().map(f).collect();
        v.sort();
        v.dedup();
        v.len() as f64
    };
    let k_se = cells(&|p| format!("{}|{}", p.0, p.1));
    let k_s = cells(&|p| p.0.clone());
    let k_e = cells(&|p| p.1.to_string());
    let bias = ((k_se - k_s - k_e + 1.0) / (2.0 * items.len().max(1) as f64)).max(0.0);

    let unit = |v: &[f64]| -> Result<Vec<f64>> {
        let n = norm(v);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(v.iter().map(|x| x / n).collect())
    };
    let queries = items.iter().map(|it| unit(&it.query)).collect::<Result<Vec<_>>>()?;
    let keys = items.iter().map(|it| unit(&it.key)).collect::<Result<Vec<_>>>()?;
    let classes: Vec<usize> = items.iter().map(|it| it.entity_class).collect();
    let score = |i: usize, j: usize| crate::linalg::dot(&queries[i], &keys[j]) / tau;

    let mut checks = Vec::new();
    for (k, &n) in batch_sizes.iter().enumerate() {
        let (mean, se) = infonce_estimate(items.len(), &classes, score, n, NegativeSampling::Marginal, passes, seed.wrapping_add(k as u64))?;
        let lower_bound = (n as f64).ln() - mean;
        let epsilon = bias + 2.0 * se;
        checks.push(BoundCheck {
            n,
            mean_loss: mean,
            standard_error: se,
            lower_bound,
            epsilon,
            slack: mi - lower_bound,
            satisfied: lower_bound <= mi + epsilon,
        });
    }
    Ok(BoundReport {
        pairs: items.len(),
        mi_plugin: mi,
        mi_bias: bias,
        all_satisfied: checks.iter().all(|c| c.satisfied),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_expectation_matches_enumeration() {
        // N = 4, 4 classes: enumerate the three negative classes directly
        let mut total = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let same = [a, b, c].iter().filter(|x| **x == 0).count();
                    total += ((1 + same) as f64).ln() / 64.0;
                }
            }
        }
        assert!((perfect_critic_expected_loss(4, 4) - total).abs() < 1e-12);
    }

    #[test]
    fn too_few_items_is_error() {
        let err = infonce_estimate(3, &[0, 1, 2], |_, _| 0.0, 4, NegativeSampling::Marginal, 1, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientEntities { needed: 4, available: 3 }));
    }
}
