//! Numerical checks of the theoretical claims on trained checkpoints: the
//! contrastive lower bound, the verification bottleneck, the language
//! influence decomposition and action robustness under perturbation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cab_bench::{CabDataset, InstructionRecord, Split};
use crate::eval::{run_split, EpisodeLog};
use crate::gsm::{assemble_entity_set, EntityMemory};
use crate::learn::{
    bound_items, infonce_estimate, perfect_critic_expected_loss, verify_infonce_bound, BoundReport, GroundingModel,
    NegativeSampling, BOUND_BATCH_SIZES,
};
use crate::linalg::{distance, log_sum_exp};
use crate::metrics::{conditional_mutual_information, language_influence, quantize_action, ActionObservation, InfluenceTrace};
use crate::planner::Ambiguity;
use crate::policy::bottleneck_audit;
use crate::world_sim::{Perturbation, PerturbationKind, Scene, Vec3};
use crate::{Error, Result};

pub const AUDIT_REPLAYS: usize = 100;
pub const INFLUENCE_BINS: usize = 5;
pub const SENSITIVITY_BINS: [usize; 2] = [3, 7];
pub const INSTRUCTIONS_PER_CONTEXT: usize = 3;
pub const ROBUSTNESS_MAGNITUDES: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1];
/// Gripper starts for influence contexts, in addition to each scene's own.
const CONTEXT_STARTS: [Vec3; 3] = [[0.2, 0.2, 0.25], [0.8, 0.2, 0.25], [0.5, 0.8, 0.25]];

// ---------------------------------------------------------------- bound

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerCases {
    /// Exact `E[L]` for a random critic on an independent joint, per N.
    pub independent_losses: Vec<(usize, f64)>,
    pub independent_ok: bool,
    /// Perfect critic on a bijective 4-class joint, negatives of distinct classes.
    pub bijective_distinct_slack: f64,
    /// Same joint with negatives from the marginal; the slack is the exact
    /// collision term `E[ln(1 + X)]` and vanishes only as N grows.
    pub bijective_marginal_slack: Vec<(usize, f64)>,
    pub bijective_ok: bool,
}

/// Exact expectation of the N-candidate loss over an independent joint of
/// `s_card × e_card` uniform symbols with an arbitrary critic.
fn independent_expected_loss(n: usize, s_card: usize, e_card: usize, critic: &[f64]) -> f64 {
    let mut total = 0.0;
    let tuples = e_card.pow(n as u32);
    for s in 0..s_card {
        for code in 0..tuples {
            let mut c = code;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let e = c % e_card;
                    c /= e_card;
                    critic[s * e_card + e]
                })
                .collect();
            total += log_sum_exp(&scores) - scores[0];
        }
    }
    total / (s_card * tuples) as f64
}

pub fn corner_cases(seed: u64) -> Result<CornerCases> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s_card, e_card) = (3, 3);
    let critic: Vec<f64> = (0..s_card * e_card).map(|_| rng.random_range(-3.0..3.0)).collect();
    let independent_losses: Vec<(usize, f64)> = [2usize, 4, 6]
        .iter()
        .map(|&n| (n, independent_expected_loss(n, s_card, e_card, &critic)))
        .collect();
    let independent_ok = independent_losses.iter().all(|&(n, l)| l >= (n as f64).ln() - 1e-12);

    // Bijective joint: class i pairs with key i; the critic scores matches at
    // `scale` and everything else at 0.
    let classes: Vec<usize> = (0..4).collect();
    let scale = 40.0;
    let score = |i: usize, j: usize| if classes[i] == classes[j] { scale } else { 0.0 };
    let (loss, _) = infonce_estimate(4, &classes, score, 4, NegativeSampling::DistinctClasses, 1, seed)?;
    let mi = 4f64.ln();
    let bijective_distinct_slack = mi - (4f64.ln() - loss);
    let bijective_marginal_slack = [4usize, 16, 64, 1000]
        .iter()
        .map(|&n| (n, mi - (n as f64).ln() + perfect_critic_expected_loss(n, 4)))
        .collect();
    Ok(CornerCases {
        independent_ok,
        independent_losses,
        bijective_ok: bijective_distinct_slack.abs() <= 0.05,
        bijective_distinct_slack,
        bijective_marginal_slack,
    })
}

// ----------------------------------------------------------- bottleneck

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckSummary {
    pub episodes: usize,
    pub identical_episodes: usize,
    pub steps_checked: usize,
    pub violations: Vec<String>,
    pub passed: bool,
}

/// Replays up to `replays` logged episodes with the instruction of another,
/// randomly chosen episode and counts episodes whose every action is
/// bitwise unchanged.
pub fn audit_replays(model: &GroundingModel, logs: &[EpisodeLog], replays: usize, seed: u64) -> Result<BottleneckSummary> {
    let usable: Vec<&EpisodeLog> = logs.iter().filter(|l| !l.steps.is_empty()).take(replays).collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientEntities {
            needed: 2,
            available: usable.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut rng);
    let mut identical = 0;
    let mut steps = 0;
    let mut violations = Vec::new();
    for (k, log) in usable.iter().enumerate() {
        let mut other = order[k];
        if usable[other].instruction == log.instruction {
            other = (other + 1) % usable.len();
        }
        let tokens = crate::planner::Instruction::tokenize(&usable[other].instruction);
        let report = bottleneck_audit(&log.policy_records(), &model.policy, model.wiring(), &[tokens])?;
        steps += report.steps_checked;
        if report.passed {
            identical += 1;
        }
        violations.extend(report.violations.into_iter().map(|v| format!("episodes[{}].{v}", log.episode_id)));
    }
    Ok(BottleneckSummary {
        episodes: usable.len(),
        identical_episodes: identical,
        steps_checked: steps,
        passed: violations.is_empty(),
        violations,
    })
}

// ------------------------------------------------------ influence grid

/// One first-step decision on the influence grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub context: u64,
    pub instruction: usize,
    /// Bit pattern of the verified goal, an exact discrete symbol.
    pub goal_bits: Vec<u64>,
    pub normalized_action: [f64; 4],
}

fn instructions_for_context<'a>(ds: &'a CabDataset, scene_id: u32) -> Vec<&'a InstructionRecord> {
    // one unambiguous instruction per distinct referent
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for inst in ds.instructions.iter().filter(|i| i.scene_id == scene_id && i.ambiguity == Ambiguity::Unambiguous) {
        let r = inst.referent_ids.iter().next().copied();
        if !seen.contains(&r) {
            seen.push(r);
            out.push(inst);
        }
        if out.len() == INSTRUCTIONS_PER_CONTEXT {
            break;
        }
    }
    out
}

/// Test scenes × gripper starts, each with the same number of unambiguous
/// instructions naming distinct objects; the first action of each.
pub fn influence_grid(model: &GroundingModel, ds: &CabDataset) -> Result<Vec<GridSample>> {
    let mut jobs = Vec::new();
    for record in ds.scenes_in(Split::Test) {
        let instructions = instructions_for_context(ds, record.scene_id);
        if instructions.len() < INSTRUCTIONS_PER_CONTEXT {
            continue;
        }
        let starts = std::iter::once(record.scene.gripper_position).chain(CONTEXT_STARTS);
        for (s, start) in starts.enumerate() {
            let context = u64::from(record.scene_id) * 16 + s as u64;
            for (k, inst) in instructions.iter().enumerate() {
                jobs.push((context, k, &record.scene, start, *inst));
            }
        }
    }
    jobs.par_iter()
        .map(|&(context, k, scene, start, inst)| {
            let mut scene: Scene = scene.clone();
            scene.gripper_position = start;
            let p = model.perceive(&scene, None, 0)?;
            let entities = assemble_entity_set(&p.graph, &EntityMemory::default())?;
            let fwd = model.act(entities, p.graph.observation_summary(), start, &inst.instruction().tokens, &inst.subgoal()?)?;
            Ok(GridSample {
                context,
                instruction: k,
                goal_bits: fwd.goal.g.iter().map(|v| v.to_bits()).collect(),
                normalized_action: fwd.action.normalized(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub bins: usize,
    pub mi_nats: f64,
    pub lambda_index: f64,
    /// Λ at other bin counts.
    pub sensitivity: BTreeMap<usize, f64>,
    pub contexts: usize,
}

fn traces(grid: &[GridSample], bins: usize) -> Vec<InfluenceTrace> {
    grid.iter()
        .map(|g| InfluenceTrace {
            context: g.context,
            instruction: g.instruction,
            action: quantize_action(&g.normalized_action, bins),
        })
        .collect()
}

pub fn influence_report(grid: &[GridSample]) -> Result<InfluenceReport> {
    let main = language_influence(&traces(grid, INFLUENCE_BINS), INSTRUCTIONS_PER_CONTEXT)?;
    let mut sensitivity = BTreeMap::new();
    for bins in SENSITIVITY_BINS {
        sensitivity.insert(bins, language_influence(&traces(grid, bins), INSTRUCTIONS_PER_CONTEXT)?.lambda_index);
    }
    let mut contexts: Vec<u64> = grid.iter().map(|g| g.context).collect();
    contexts.dedup();
    Ok(InfluenceReport {
        bins: INFLUENCE_BINS,
        mi_nats: main.mi_nats,
        lambda_index: main.lambda_index,
        sensitivity,
        contexts: contexts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub i_language_action: f64,
    pub i_language_goal: f64,
    pub i_language_goal_given_action: f64,
    /// `|I(L;a|C) − (I(L;g|C) − I(L;g|a,C))|`.
    pub residual: f64,
    /// Every (context, goal) maps to a single action cell.
    pub deterministic: bool,
    pub holds: bool,
}

/// `I(L;a|C) = I(L;g|C) − I(L;g|a,C)` on the quantized grid.
pub fn decomposition_check(grid: &[GridSample], bins: usize) -> Result<DecompositionCheck> {
    let cell = |g: &GridSample| match quantize_action(&g.normalized_action, bins) {
        ActionObservation::Quantized(v) => v,
        ActionObservation::Continuous(_) => unreachable!("quantize_action always bins"),
    };
    let mut map: BTreeMap<(u64, &Vec<u64>), Vec<i64>> = BTreeMap::new();
    let mut deterministic = true;
    for g in grid {
        let a = cell(g);
        if let Some(prev) = map.insert((g.context, &g.goal_bits), a.clone()) {
            deterministic &= prev == a;
        }
    }
    let la: Vec<_> = grid.iter().map(|g| (g.instruction, cell(g), g.context)).collect();
    let lg: Vec<_> = grid.iter().map(|g| (g.instruction, g.goal_bits.clone(), g.context)).collect();
    let lga: Vec<_> = grid.iter().map(|g| (g.instruction, g.goal_bits.clone(), (cell(g), g.context))).collect();
    let i_la = conditional_mutual_information(&la);
    let i_lg = conditional_mutual_information(&lg);
    let i_lga = conditional_mutual_information(&lga);
    let residual = (i_la - (i_lg - i_lga)).abs();
    Ok(DecompositionCheck {
        i_language_action: i_la,
        i_language_goal: i_lg,
        i_language_goal_given_action: i_lga,
        residual,
        deterministic,
        holds: deterministic && residual <= 1e-6,
    })
}

// ----------------------------------------------------------- robustness

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("a line fit needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("line fit needs distinct x values".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSweep {
    pub kind: PerturbationKind,
    /// Mean `‖a(perturbed) − a(clean)‖` over the probe set, per magnitude.
    pub displacement: Vec<(f64, f64)>,
    pub fit: LinearFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub probes: usize,
    pub kinds: Vec<KindSweep>,
    /// Fit over the mean across kinds.
    pub overall: LinearFit,
    pub zero_magnitude_identical: bool,
    pub slope_finite: bool,
}

fn first_action(model: &GroundingModel, scene: &Scene, inst: &InstructionRecord, p: Option<&Perturbation>) -> Result<[f64; 4]> {
    let perception = model.perceive(scene, p, 0)?;
    let entities = assemble_entity_set(&perception.graph, &EntityMemory::default())?;
    let fwd = model.act(
        entities,
        perception.graph.observation_summary(),
        scene.gripper_position,
        &inst.instruction().tokens,
        &inst.subgoal()?,
    )?;
    Ok(fwd.action.normalized())
}

/// First-step action displacement of the unambiguous test instructions
/// under each perturbation kind and magnitude.
pub fn robustness_sweep(model: &GroundingModel, ds: &CabDataset, seed: u64) -> Result<RobustnessReport> {
    let probes: Vec<(&Scene, &InstructionRecord)> = ds
        .instructions_in(Split::Test)
        .filter(|i| i.ambiguity == Ambiguity::Unambiguous)
        .map(|i| ds.scene(i.scene_id).map(|r| (&r.scene, i)).ok_or(Error::InvalidArgument(format!("unknown scene {}", i.scene_id))))
        .collect::<Result<_>>()?;
    let clean = probes
        .par_iter()
        .map(|(s, i)| first_action(model, s, i, None))
        .collect::<Result<Vec<_>>>()?;

    let mut zero_identical = true;
    let mut kinds = Vec::new();
    let mut overall = vec![0.0; ROBUSTNESS_MAGNITUDES.len()];
    for (k, &kind) in PerturbationKind::ALL.iter().enumerate() {
        let zero = Perturbation::new(kind, 0.0, seed);
        let same = probes
            .par_iter()
            .zip(&clean)
            .map(|((s, i), c)| Ok(first_action(model, s, i, Some(&zero))?.map(f64::to_bits) == c.map(f64::to_bits)))
            .collect::<Result<Vec<bool>>>()?;
        zero_identical &= same.iter().all(|b| *b);

        let mut displacement = Vec::new();
        for (mi, &m) in ROBUSTNESS_MAGNITUDES.iter().enumerate() {
            let p = Perturbation::new(kind, m, seed.wrapping_add(k as u64));
            let d = probes
                .par_iter()
                .zip(&clean)
                .map(|((s, i), c)| Ok(distance(&first_action(model, s, i, Some(&p))?, c)))
                .collect::<Result<Vec<f64>>>()?;
            let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
            overall[mi] += mean / PerturbationKind::ALL.len() as f64;
            displacement.push((m, mean));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = displacement.iter().copied().unzip();
        kinds.push(KindSweep {
            kind,
            fit: linear_fit(&xs, &ys)?,
            displacement,
        });
    }
    let overall = linear_fit(&ROBUSTNESS_MAGNITUDES, &overall)?;
    Ok(RobustnessReport {
        probes: probes.len(),
        slope_finite: overall.slope.is_finite() && kinds.iter().all(|k| k.fit.slope.is_finite()),
        kinds,
        overall,
        zero_magnitude_identical: zero_identical,
    })
}

// --------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub tau: f64,
    pub passes: usize,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            passes: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub bound: BoundReport,
    pub corner_cases: CornerCases,
    pub bottleneck: BottleneckSummary,
    pub influence: InfluenceReport,
    pub decomposition: DecompositionCheck,
    pub robustness: RobustnessReport,
}

impl TheoryReport {
    /// Bound satisfied on the checkpoint and corner cases exact.
    pub fn bound_ok(&self) -> bool {
        self.bound.all_satisfied && self.corner_cases.independent_ok && self.corner_cases.bijective_ok
    }

    pub fn all_ok(&self) -> bool {
        self.bound_ok()
            && self.bottleneck.passed
            && self.decomposition.holds
            && self.robustness.zero_magnitude_identical
            && self.robustness.slope_finite
    }
}

/// Every check on one checkpoint, using test-split data.
pub fn verify_theory(model: &GroundingModel, ds: &CabDataset, config: &TheoryConfig) -> Result<TheoryReport> {
    let items = bound_items(model, ds, Split::Test, config.seed)?;
    let bound = verify_infonce_bound(&items, &BOUND_BATCH_SIZES, config.tau, config.passes, config.seed)?;
    let logs = run_split(model, ds, Split::Test, None)?;
    let bottleneck = audit_replays(model, &logs, AUDIT_REPLAYS, config.seed)?;
    let grid = influence_grid(model, ds)?;
    Ok(TheoryReport {
        bound,
        corner_cases: corner_cases(config.seed)?,
        bottleneck,
        influence: influence_report(&grid)?,
        decomposition: decomposition_check(&grid, INFLUENCE_BINS)?,
        robustness: robustness_sweep(model, ds, config.seed)?,
    })
}
