//! Entropy-gated clarification: the act/clarify rule, threshold calibration
//! and risk-coverage curves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cab_bench::Split;
use crate::metrics::{clar_at_ambig, total_score, unambig_sr, ScoredEpisode};
use crate::saca::VerifiedGoal;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivePolicy {
    pub threshold: f64,
    pub calibration_split: Split,
    /// Every calibration entropy was identical, so no threshold separates anything.
    pub degenerate: bool,
}

impl SelectivePolicy {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} must be nonnegative")));
        }
        Ok(Self {
            threshold,
            calibration_split: Split::Val,
            degenerate: false,
        })
    }

    /// Acts on everything.
    pub fn always_act() -> Self {
        Self {
            threshold: f64::INFINITY,
            calibration_split: Split::Val,
            degenerate: false,
        }
    }

    pub fn clarifies(&self, entropy: f64) -> bool {
        entropy > self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Act,
    Clarify,
}

/// Clarify iff the entropy strictly exceeds the threshold.
pub fn decide(goal: &VerifiedGoal, policy: &SelectivePolicy) -> Decision {
    if policy.clarifies(goal.entropy) {
        Decision::Clarify
    } else {
        Decision::Act
    }
}

pub fn apply_policy(episodes: &[ScoredEpisode], policy: &SelectivePolicy) -> Vec<ScoredEpisode> {
    episodes.iter().map(|e| e.clone().decided(policy.clarifies(e.entropy))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTarget {
    /// Macro average of clarification rate on ambiguous and success on unambiguous.
    MaxTotal,
    /// Largest coverage whose selective accuracy is at least 0.95.
    CovAt95,
    /// Most clarification on ambiguous episodes while unambiguous success
    /// stays within [`SR_DROP_BUDGET`] of acting on everything.
    ClarifyWithinBudget,
}

pub const SR_DROP_BUDGET: f64 = 0.05;

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Thresholds that realize every distinct act set: half the smallest entropy
/// (act on none), the midpoints between consecutive distinct entropies, and
/// the largest entropy (act on all).
pub fn candidate_thresholds(entropies: &[f64]) -> Vec<f64> {
    let distinct = distinct_sorted(entropies.iter().copied());
    let mut out = Vec::with_capacity(distinct.len() + 1);
    if let Some(&first) = distinct.first() {
        if first > 0.0 {
            out.push(first / 2.0);
        }
    }
    for w in distinct.windows(2) {
        out.push((w[0] + w[1]) / 2.0);
    }
    if let Some(&last) = distinct.last() {
        out.push(last);
    }
    out
}

fn objective(episodes: &[ScoredEpisode], threshold: f64, target: CalibrationTarget) -> f64 {
    let decided: Vec<ScoredEpisode> = episodes.iter().map(|e| e.clone().decided(e.entropy > threshold)).collect();
    match target {
        CalibrationTarget::MaxTotal => total_score(&decided),
        CalibrationTarget::CovAt95 => {
            let acted: Vec<_> = decided.iter().filter(|e| !e.clarified).collect();
            if acted.is_empty() {
                return -1.0;
            }
            let coverage = acted.len() as f64 / decided.len() as f64;
            let accuracy = acted.iter().filter(|e| e.succeeded).count() as f64 / acted.len() as f64;
            // feasible points rank by coverage, infeasible ones below them by accuracy
            if accuracy >= 0.95 {
                1.0 + coverage
            } else {
                accuracy
            }
        }
        CalibrationTarget::ClarifyWithinBudget => {
            let baseline = unambig_sr(&apply_policy(episodes, &SelectivePolicy::always_act()));
            let drop = baseline - unambig_sr(&decided);
            if drop <= SR_DROP_BUDGET + 1e-12 {
                1.0 + clar_at_ambig(&decided)
            } else {
                -drop
            }
        }
    }
}

/// Sweeps [`candidate_thresholds`] and keeps the best; ties go to the
/// smaller threshold. Under [`CalibrationTarget::ClarifyWithinBudget`] the
/// first run of tied candidates is collapsed to its midpoint instead, which
/// keeps the threshold away from both class edges when validation separates
/// them cleanly.
pub fn calibrate_threshold(val: &[ScoredEpisode], target: CalibrationTarget) -> Result<SelectivePolicy> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let entropies: Vec<f64> = val.iter().map(|e| e.entropy).collect();
    let candidates = candidate_thresholds(&entropies);
    let scores: Vec<f64> = candidates.iter().map(|&t| objective(val, t, target)).collect();
    let mut first = 0;
    for (i, &score) in scores.iter().enumerate() {
        if score > scores[first] {
            first = i;
        }
    }
    let threshold = match target {
        CalibrationTarget::ClarifyWithinBudget => {
            let last = (first..scores.len()).take_while(|&i| scores[i] == scores[first]).last().unwrap_or(first);
            (candidates[first] + candidates[last]) / 2.0
        }
        _ => candidates[first],
    };
    Ok(SelectivePolicy {
        threshold,
        calibration_split: Split::Val,
        degenerate: distinct_sorted(entropies.into_iter()).len() == 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub risk: f64,
    pub threshold: f64,
}

/// One point per distinct entropy `h`, acting on episodes with entropy
/// `≤ h`; sorted by coverage. Risk is the failure rate among acted episodes,
/// where acting on an ambiguous instruction is a failure.
pub fn risk_coverage_curve(episodes: &[ScoredEpisode]) -> Vec<RiskCoveragePoint> {
    let mut sorted: Vec<&ScoredEpisode> = episodes.iter().collect();
    sorted.sort_by(|a, b| a.entropy.total_cmp(&b.entropy));
    let n = sorted.len() as f64;
    let mut points = Vec::new();
    let mut failures = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let h = sorted[i].entropy;
        while i < sorted.len() && sorted[i].entropy == h {
            let e = sorted[i];
            if e.is_ambiguous || !e.act_success {
                failures += 1;
            }
            i += 1;
        }
        points.push(RiskCoveragePoint {
            coverage: i as f64 / n,
            risk: failures as f64 / i as f64,
            threshold: h,
        });
    }
    points
}

/// Risk at the smallest achievable coverage that is at least `level`.
pub fn risk_at_coverage(curve: &[RiskCoveragePoint], level: f64) -> Option<f64> {
    curve.iter().find(|p| p.coverage >= level - 1e-12).map(|p| p.risk)
}

pub fn cov_at_95(episodes: &[ScoredEpisode]) -> f64 {
    risk_coverage_curve(episodes)
        .iter()
        .filter(|p| 1.0 - p.risk >= 0.95)
        .map(|p| p.coverage)
        .fold(0.0, f64::max)
}

pub const COVERAGE_LEVELS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Fraction of [`COVERAGE_LEVELS`] where curve `a` has risk no higher than `b`.
pub fn dominated_fraction(a: &[ScoredEpisode], b: &[ScoredEpisode]) -> f64 {
    let (ca, cb) = (risk_coverage_curve(a), risk_coverage_curve(b));
    let wins = COVERAGE_LEVELS
        .iter()
        .filter(|&&c| match (risk_at_coverage(&ca, c), risk_at_coverage(&cb, c)) {
            (Some(ra), Some(rb)) => ra <= rb + 1e-12,
            _ => false,
        })
        .count();
    wins as f64 / COVERAGE_LEVELS.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub observed_fraction: f64,
    /// Lower end of the one-sided bootstrap interval at `confidence`.
    pub lower_bound: f64,
    pub confidence: f64,
    pub resamples: usize,
}

/// Paired bootstrap over episodes: `a[i]` and `b[i]` must describe the same
/// instruction under two models.
pub fn compare_curves(
    a: &[ScoredEpisode],
    b: &[ScoredEpisode],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<CurveComparison> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "paired episode logs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fractions = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let idx: Vec<usize> = (0..a.len()).map(|_| rng.random_range(0..a.len())).collect();
        let ra: Vec<ScoredEpisode> = idx.iter().map(|&i| a[i].clone()).collect();
        let rb: Vec<ScoredEpisode> = idx.iter().map(|&i| b[i].clone()).collect();
        fractions.push(dominated_fraction(&ra, &rb));
    }
    fractions.sort_by(f64::total_cmp);
    let k = (((1.0 - confidence) * resamples as f64).floor() as usize).min(resamples.saturating_sub(1));
    Ok(CurveComparison {
        observed_fraction: dominated_fraction(a, b),
        lower_bound: fractions.get(k).copied().unwrap_or(f64::NAN),
        confidence,
        resamples,
    })
}

/// Clarification rate on ambiguous episodes under `policy`.
pub fn clarification_rate(episodes: &[ScoredEpisode], policy: &SelectivePolicy) -> f64 {
    clar_at_ambig(&apply_policy(episodes, policy))
}
