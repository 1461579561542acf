//! Independent oracles shared by the integration tests and the acceptance
//! runner: central finite differences and brute-force metric twins.
#![allow(dead_code)]

use std::collections::HashMap;

use groundvla::gsm::{EncoderParams, APPEARANCE_DIM, ENTITY_ROW_DIM, RAW_DIM};
use groundvla::learn::{action_loss, gac_loss};
use groundvla::linalg::Matrix;
use groundvla::metrics::{
    aupr, auroc, ece, mutual_information, recall_at_k, RetrievalEpisode,
};
use groundvla::policy::{policy_backward, policy_forward, PolicyInput, PolicyParams, ACTION_DIM};
use groundvla::saca::{saca_backward, saca_forward_rows, SacaParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// Five-point central difference, error O(h⁴).
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |i: usize, offset: f64| {
        let orig = probe[i];
        probe[i] = orig + offset;
        let v = f(&probe);
        probe[i] = orig;
        v
    };
    (0..x.len())
        .map(|i| {
            let near = at(i, h) - at(i, -h);
            let far = at(i, 2.0 * h) - at(i, -2.0 * h);
            (8.0 * near - far) / (12.0 * h)
        })
        .collect()
}

/// Componentwise relative error; magnitudes below 1e-6 compare absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, random_vec(rng, rows * cols, scale)).unwrap()
}

#[derive(Debug, Clone)]
pub struct GateResult {
    pub component: &'static str,
    pub instances: usize,
    pub max_error: f64,
}

impl GateResult {
    pub fn passed(&self) -> bool {
        self.max_error < GRADIENT_TOLERANCE
    }
}

fn saca_instance(rng: &mut ChaCha8Rng) -> f64 {
    let d = [4, 8, 16][rng.random_range(0..3)];
    let query_dim = 10;
    let n = rng.random_range(1..=6);
    let params = SacaParams {
        w_q: random_matrix(rng, d, query_dim, 0.5),
        w_k: random_matrix(rng, d, ENTITY_ROW_DIM, 0.5),
        w_v: random_matrix(rng, d, ENTITY_ROW_DIM, 0.5),
    };
    let subgoal = random_vec(rng, query_dim, 1.0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, ENTITY_ROW_DIM, 1.0)).collect();
    let ids: Vec<u32> = (0..n as u32).collect();
    let c = random_vec(rng, d, 1.0);
    let loss = |p: &SacaParams, s: &[f64], r: &[Vec<f64>]| -> f64 {
        let (goal, _) = saca_forward_rows(s, r, &ids, p).unwrap();
        goal.g.iter().zip(&c).map(|(a, b)| a * b).sum()
    };

    let (_, cache) = saca_forward_rows(&subgoal, &rows, &ids, &params).unwrap();
    let mut grad = params.zeros_like();
    let inputs = saca_backward(&params, &cache, &c, &mut grad).unwrap();

    let flat: Vec<f64> = [&params.w_q, &params.w_k, &params.w_v].iter().flat_map(|m| m.data().to_vec()).collect();
    let unflatten = |x: &[f64]| {
        let (q, rest) = x.split_at(d * query_dim);
        let (k, v) = rest.split_at(d * ENTITY_ROW_DIM);
        SacaParams {
            w_q: Matrix::from_vec(d, query_dim, q.to_vec()).unwrap(),
            w_k: Matrix::from_vec(d, ENTITY_ROW_DIM, k.to_vec()).unwrap(),
            w_v: Matrix::from_vec(d, ENTITY_ROW_DIM, v.to_vec()).unwrap(),
        }
    };
    let analytic: Vec<f64> = [&grad.w_q, &grad.w_k, &grad.w_v].iter().flat_map(|m| m.data().to_vec()).collect();
    let numeric = numerical_gradient(|x| loss(&unflatten(x), &subgoal, &rows), &flat, FD_STEP);
    let mut err = max_relative_error(&analytic, &numeric);

    let numeric = numerical_gradient(|x| loss(&params, x, &rows), &subgoal, FD_STEP);
    err = err.max(max_relative_error(&inputs.d_subgoal, &numeric));
    let flat_rows: Vec<f64> = rows.concat();
    let numeric = numerical_gradient(
        |x| loss(&params, &subgoal, &x.chunks(ENTITY_ROW_DIM).map(<[f64]>::to_vec).collect::<Vec<_>>()),
        &flat_rows,
        FD_STEP,
    );
    err.max(max_relative_error(&inputs.d_rows.concat(), &numeric))
}

fn gac_instance(rng: &mut ChaCha8Rng) -> f64 {
    let d = rng.random_range(2..=16);
    let negatives = rng.random_range(1..=15);
    let tau = [0.07, 0.2, 1.0][rng.random_range(0..3)];
    let query = random_vec(rng, d, 1.0);
    let positive = random_vec(rng, d, 1.0);
    let negs: Vec<Vec<f64>> = (0..negatives).map(|_| random_vec(rng, d, 1.0)).collect();
    let out = gac_loss(&query, &positive, &negs, tau).unwrap();
    let mut err = max_relative_error(
        &out.d_query,
        &numerical_gradient(|x| gac_loss(x, &positive, &negs, tau).unwrap().loss, &query, FD_STEP),
    );
    err = err.max(max_relative_error(
        &out.d_positive,
        &numerical_gradient(|x| gac_loss(&query, x, &negs, tau).unwrap().loss, &positive, FD_STEP),
    ));
    let flat = negs.concat();
    let numeric = numerical_gradient(
        |x| gac_loss(&query, &positive, &x.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>(), tau).unwrap().loss,
        &flat,
        FD_STEP,
    );
    err.max(max_relative_error(&out.d_negatives.concat(), &numeric))
}

fn action_instance(rng: &mut ChaCha8Rng) -> f64 {
    let a = random_vec(rng, ACTION_DIM, 2.0);
    let b = random_vec(rng, ACTION_DIM, 2.0);
    let (_, grad) = action_loss(&a, &b).unwrap();
    max_relative_error(&grad, &numerical_gradient(|x| action_loss(x, &b).unwrap().0, &a, FD_STEP))
}

fn encoder_instance(rng: &mut ChaCha8Rng) -> f64 {
    let params = EncoderParams {
        weights: random_matrix(rng, APPEARANCE_DIM, RAW_DIM, 0.5),
    };
    let raw = random_vec(rng, RAW_DIM, 1.0);
    let c = random_vec(rng, APPEARANCE_DIM, 1.0);
    let loss = |p: &EncoderParams| -> f64 { p.forward(&raw).unwrap().appearance.iter().zip(&c).map(|(a, b)| a * b).sum() };
    let cache = params.forward(&raw).unwrap();
    let mut grad = params.zeros_like();
    params.backward(&cache, &c, &mut grad);
    let numeric = numerical_gradient(
        |x| {
            loss(&EncoderParams {
                weights: Matrix::from_vec(APPEARANCE_DIM, RAW_DIM, x.to_vec()).unwrap(),
            })
        },
        params.weights.data(),
        FD_STEP,
    );
    max_relative_error(grad.weights.data(), &numeric)
}

fn policy_input(x: &[f64]) -> PolicyInput {
    let n = x.len();
    PolicyInput {
        g: x[..n - 7].to_vec(),
        obs: x[n - 7..n - 3].to_vec(),
        q: [x[n - 3], x[n - 2], x[n - 1]],
        instruction_features: None,
    }
}

fn policy_instance(rng: &mut ChaCha8Rng) -> f64 {
    let input_dim = rng.random_range(8..=24);
    let hidden = rng.random_range(2..=12);
    let params = PolicyParams {
        w1: random_matrix(rng, hidden, input_dim, 0.6),
        b1: random_vec(rng, hidden, 0.3),
        w2: random_matrix(rng, ACTION_DIM, hidden, 0.6),
        b2: random_vec(rng, ACTION_DIM, 0.3),
    };
    let x = random_vec(rng, input_dim, 1.0);
    let target = random_vec(rng, ACTION_DIM, 1.0);
    let loss = |p: &PolicyParams, x: &[f64]| -> f64 {
        let (_, cache) = policy_forward(&policy_input(x), p).unwrap();
        action_loss(&cache.output, &target).unwrap().0
    };
    let (_, cache) = policy_forward(&policy_input(&x), &params).unwrap();
    let (_, d_out) = action_loss(&cache.output, &target).unwrap();
    let d_out: [f64; ACTION_DIM] = d_out.try_into().unwrap();
    let mut grad = params.zeros_like();
    let d_x = policy_backward(&params, &cache, &d_out, &mut grad);

    let flatten = |p: &PolicyParams| -> Vec<f64> {
        let mut v = p.w1.data().to_vec();
        v.extend(&p.b1);
        v.extend(p.w2.data());
        v.extend(&p.b2);
        v
    };
    let unflatten = |v: &[f64]| -> PolicyParams {
        let (w1, rest) = v.split_at(hidden * input_dim);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(ACTION_DIM * hidden);
        PolicyParams {
            w1: Matrix::from_vec(hidden, input_dim, w1.to_vec()).unwrap(),
            b1: b1.to_vec(),
            w2: Matrix::from_vec(ACTION_DIM, hidden, w2.to_vec()).unwrap(),
            b2: b2.to_vec(),
        }
    };
    let numeric = numerical_gradient(|v| loss(&unflatten(v), &x), &flatten(&params), FD_STEP);
    let err = max_relative_error(&flatten(&grad), &numeric);
    err.max(max_relative_error(&d_x, &numerical_gradient(|v| loss(&params, v), &x, FD_STEP)))
}

/// Every analytic gradient against central differences, `instances` random cases per component.
pub fn gradient_gate(instances: usize, seed: u64) -> Vec<GateResult> {
    let components: [(&'static str, fn(&mut ChaCha8Rng) -> f64); 5] = [
        ("attention", saca_instance),
        ("contrastive", gac_instance),
        ("action loss", action_instance),
        ("encoder", encoder_instance),
        ("policy", policy_instance),
    ];
    components
        .iter()
        .enumerate()
        .map(|(k, (name, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1) * 0x9e37_79b9);
            let max_error = (0..instances).map(|_| f(&mut rng)).fold(0.0, f64::max);
            GateResult {
                component: name,
                instances,
                max_error,
            }
        })
        .collect()
}

// ------------------------------------------------------------ metric twins

/// All positive/negative pairs, ties counted as one half.
pub fn brute_auroc(scores: &[(f64, bool)]) -> f64 {
    let (mut num, mut pairs) = (0u128, 0u128);
    for (sp, _) in scores.iter().filter(|(_, y)| *y) {
        for (sn, _) in scores.iter().filter(|(_, y)| !*y) {
            num += if sp > sn { 2 } else if sp == sn { 1 } else { 0 };
            pairs += 2;
        }
    }
    num as f64 / pairs as f64
}

/// Step-wise precision-recall area: one step per distinct threshold,
/// counting members by direct scans.
pub fn brute_aupr(scores: &[(f64, bool)]) -> f64 {
    let pos = scores.iter().filter(|(_, y)| *y).count();
    let mut thresholds: Vec<f64> = scores.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for t in thresholds {
        let tp = scores.iter().filter(|(s, y)| *s >= t && *y).count();
        let flagged = scores.iter().filter(|(s, _)| *s >= t).count();
        if tp > prev_tp {
            ap += ((tp - prev_tp) as f64 / pos as f64) * (tp as f64 / flagged as f64);
        }
        prev_tp = tp;
    }
    ap
}

/// Bins by interval membership rather than by index arithmetic.
pub fn brute_ece(confidences: &[f64], outcomes: &[bool], bins: usize) -> f64 {
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..confidences.len())
            .filter(|&i| {
                let c = confidences[i];
                c >= lo && (c < hi || (b == bins - 1 && c <= 1.0))
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|&&i| outcomes[i]).count() as f64 / k;
        let conf = members.iter().map(|&i| confidences[i]).sum::<f64>() / k;
        total += (k / n) * (acc - conf).abs();
    }
    total
}

/// Sorts candidates by logit, putting the true one after any it ties with.
pub fn brute_recall(episodes: &[RetrievalEpisode], k: usize) -> f64 {
    let hits = episodes
        .iter()
        .filter(|e| {
            let mut order: Vec<usize> = (0..e.logits.len()).collect();
            order.sort_by(|&a, &b| {
                e.logits[b]
                    .total_cmp(&e.logits[a])
                    .then((e.candidate_ids[a] == e.true_id).cmp(&(e.candidate_ids[b] == e.true_id)))
            });
            let pos = order.iter().position(|&i| e.candidate_ids[i] == e.true_id).unwrap();
            pos < k
        })
        .count();
    hits as f64 / episodes.len() as f64
}

/// `Σ p(x,y) ln(p(x,y) / p(x)p(y))` from explicit probability tables.
pub fn brute_mi(samples: &[(u8, u8)]) -> f64 {
    let n = samples.len() as f64;
    let mut pxy: HashMap<(u8, u8), f64> = HashMap::new();
    let mut px: HashMap<u8, f64> = HashMap::new();
    let mut py: HashMap<u8, f64> = HashMap::new();
    for &(x, y) in samples {
        *pxy.entry((x, y)).or_default() += 1.0 / n;
        *px.entry(x).or_default() += 1.0 / n;
        *py.entry(y).or_default() += 1.0 / n;
    }
    pxy.iter().map(|(&(x, y), &p)| p * (p / (px[&x] * py[&y])).ln()).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub metric: &'static str,
    pub trials: usize,
    pub max_difference: f64,
    pub tolerance: f64,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.max_difference <= self.tolerance
    }
}

fn random_scores(rng: &mut ChaCha8Rng) -> Vec<(f64, bool)> {
    loop {
        let n = rng.random_range(2..=20);
        // a coarse grid forces ties
        let grid = rng.random_bool(0.5);
        let v: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let s = if grid { rng.random_range(0..5) as f64 / 4.0 } else { rng.random::<f64>() };
                (s, rng.random_bool(0.5))
            })
            .collect();
        if v.iter().any(|p| p.1) && v.iter().any(|p| !p.1) {
            return v;
        }
    }
}

/// Each metric against its twin on `trials` random inputs of up to 20 elements.
pub fn metric_oracles(trials: usize, seed: u64) -> Vec<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..trials {
        let scores = random_scores(&mut rng);
        worst[0] = worst[0].max((auroc(&scores).unwrap() - brute_auroc(&scores)).abs());
        worst[1] = worst[1].max((aupr(&scores).unwrap() - brute_aupr(&scores)).abs());

        let n = rng.random_range(1..=20);
        let conf: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random::<f64>(),
            })
            .collect();
        let outcomes: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let bins = rng.random_range(1..=15);
        worst[2] = worst[2].max((ece(&conf, &outcomes, bins).unwrap() - brute_ece(&conf, &outcomes, bins)).abs());

        let episodes: Vec<RetrievalEpisode> = (0..rng.random_range(1..=20))
            .map(|_| {
                let m = rng.random_range(1..=12);
                let candidate_ids: Vec<u32> = (0..m as u32).map(|i| i * 3 + 1).collect();
                let logits = (0..m).map(|_| rng.random_range(0..4) as f64).collect();
                let true_id = candidate_ids[rng.random_range(0..m)];
                RetrievalEpisode {
                    candidate_ids,
                    logits,
                    true_id,
                }
            })
            .collect();
        let k = rng.random_range(1..=5);
        worst[3] = worst[3].max((recall_at_k(&episodes, k).unwrap() - brute_recall(&episodes, k)).abs());

        let samples: Vec<(u8, u8)> = (0..rng.random_range(1..=20)).map(|_| (rng.random_range(0..4), rng.random_range(0..4))).collect();
        worst[4] = worst[4].max((mutual_information(&samples) - brute_mi(&samples)).abs());
    }
    let names = ["AUROC", "AUPR", "ECE", "Recall@k", "MI plug-in"];
    let tolerances = [0.0, 0.0, 1e-12, 1e-12, 1e-12];
    (0..5)
        .map(|i| OracleResult {
            metric: names[i],
            trials,
            max_difference: worst[i],
            tolerance: tolerances[i],
        })
        .collect()
}
