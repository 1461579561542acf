//! Closed-loop episodes on the benchmark, retrieval probes and the
//! aggregate metrics report.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cab_bench::{CabDataset, InstructionRecord, Split};
use crate::gsm::{assemble_entity_set, update_memory, EntityMemory};
use crate::learn::GroundingModel;
use crate::metrics::{
    aupr, auroc, clar_at_ambig, confidence_from_entropy, ece, fpr_at_95, rank_of_true, recall_at_k,
    total_score, unambig_sr, RetrievalEpisode, ScoredEpisode, ECE_BINS,
};
use crate::planner::{plan, Ambiguity};
use crate::policy::{ActionVector, PolicyInput, PolicyStepRecord};
use crate::saca::saca_forward_rows;
use crate::selective::{
    apply_policy, calibrate_threshold, cov_at_95, risk_coverage_curve, CalibrationTarget,
    RiskCoveragePoint, SelectivePolicy,
};
use crate::world_sim::{execute_pick, Perturbation, Scene, StepOutcome};
use crate::{Error, Result};

pub const MAX_EPISODE_STEPS: usize = 20;
pub const RETRIEVAL_SIZES: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub t: usize,
    pub entity_ids: Vec<u32>,
    pub alpha: Vec<f64>,
    pub logits: Vec<f64>,
    pub entropy: f64,
    pub argmax_entity: u32,
    pub policy_input: PolicyInput,
    pub action: ActionVector,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_id: u32,
    pub scene_id: u32,
    pub split: Split,
    pub instruction: String,
    pub template: String,
    pub ambiguity: Ambiguity,
    pub referent_ids: BTreeSet<u32>,
    pub planner_invocations: usize,
    /// Grounding failed twice and the planner asked for clarification.
    pub planner_clarify: bool,
    /// Attention entropy at the first step; the clarify decision uses it.
    pub entropy: f64,
    pub n_entities: usize,
    pub grasped: Option<u32>,
    pub steps: Vec<EpisodeStep>,
}

impl EpisodeLog {
    pub fn is_ambiguous(&self) -> bool {
        self.ambiguity == Ambiguity::Ambiguous
    }

    pub fn act_success(&self) -> bool {
        !self.is_ambiguous() && !self.planner_clarify && self.grasped.is_some_and(|id| self.referent_ids.contains(&id))
    }

    pub fn scored(&self) -> ScoredEpisode {
        let e = ScoredEpisode {
            entropy: self.entropy,
            n_entities: self.n_entities,
            is_ambiguous: self.is_ambiguous(),
            act_success: self.act_success(),
            clarified: false,
            succeeded: false,
            retrieval_rank: None,
        };
        e.decided(self.planner_clarify)
    }

    pub fn policy_records(&self) -> Vec<PolicyStepRecord> {
        self.steps
            .iter()
            .map(|s| PolicyStepRecord {
                policy_input: s.policy_input.clone(),
                action: s.action,
            })
            .collect()
    }
}

/// Runs one instruction closed loop until the gripper closes or the step
/// budget runs out. Observations may be perturbed; execution always uses the
/// true scene.
pub fn run_episode(
    model: &GroundingModel,
    scene: &Scene,
    record: &InstructionRecord,
    perturbation: Option<&Perturbation>,
) -> Result<EpisodeLog> {
    let instruction = record.instruction();
    let mut state = scene.clone();
    let mut memory = EntityMemory::default();
    let mut steps = Vec::new();
    let mut grasped = None;

    let first = model.perceive(&state, perturbation, 0)?;
    let outcome = plan(&instruction, &assemble_entity_set(&first.graph, &memory)?)?;
    let mut log = EpisodeLog {
        episode_id: record.instruction_id,
        scene_id: record.scene_id,
        split: record.split,
        instruction: record.text.clone(),
        template: outcome.subgoal.canonical(),
        ambiguity: record.ambiguity,
        referent_ids: record.referent_ids.clone(),
        planner_invocations: outcome.invocations,
        planner_clarify: outcome.clarify,
        entropy: 0.0,
        n_entities: first.graph.nodes.len(),
        grasped: None,
        steps: Vec::new(),
    };
    if outcome.clarify {
        log.entropy = (log.n_entities.max(1) as f64).ln();
        return Ok(log);
    }

    let mut perception = first;
    for t in 0..MAX_EPISODE_STEPS {
        if t > 0 {
            perception = model.perceive(&state, perturbation, t as u64)?;
        }
        let entities = assemble_entity_set(&perception.graph, &memory)?;
        memory = update_memory(memory, &perception.graph);
        let obs = perception.graph.observation_summary();
        let fwd = model.act(entities, obs, state.gripper_position, &instruction.tokens, &outcome.subgoal)?;
        let result = execute_pick(&state, &fwd.action);
        state.gripper_position = result.gripper_position;
        let done = result.attempted_grasp();
        grasped = result.grasped();
        steps.push(EpisodeStep {
            t,
            entity_ids: fwd.entities.ids(),
            alpha: fwd.goal.alpha,
            logits: fwd.goal.logits,
            entropy: fwd.goal.entropy,
            argmax_entity: fwd.goal.argmax_entity,
            policy_input: fwd.input,
            action: fwd.action,
            outcome: result,
        });
        if done {
            break;
        }
    }
    log.entropy = steps[0].entropy;
    log.n_entities = steps[0].entity_ids.len();
    log.grasped = grasped;
    log.steps = steps;
    Ok(log)
}

/// Every instruction of `split`, evaluated in parallel and returned in
/// instruction order.
pub fn run_split(model: &GroundingModel, ds: &CabDataset, split: Split, perturbation: Option<&Perturbation>) -> Result<Vec<EpisodeLog>> {
    let records: Vec<&InstructionRecord> = ds.instructions_in(split).collect();
    records
        .par_iter()
        .map(|r| {
            let scene = &ds.scene(r.scene_id).ok_or_else(|| Error::InvalidArgument(format!("unknown scene {}", r.scene_id)))?.scene;
            run_episode(model, scene, r, perturbation)
        })
        .collect()
}

/// Candidate pools for retrieval: the referent of each unambiguous
/// instruction of `split` against `n − 1` distractor entities from the same
/// split that do not match the template (drawn with replacement when the
/// pool is smaller than `n − 1`).
pub fn retrieval_episodes(
    model: &GroundingModel,
    ds: &CabDataset,
    split: Split,
    n: usize,
    perturbation: Option<&Perturbation>,
    seed: u64,
) -> Result<Vec<RetrievalEpisode>> {
    if n == 0 {
        return Err(Error::InvalidArgument("candidate set size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x51_7cc1_b727_220a));
    let mut pool = Vec::new();
    let mut by_scene = BTreeMap::new();
    for record in ds.scenes_in(split) {
        let scene_pert = perturbation.map(|p| Perturbation {
            seed: p.seed ^ u64::from(record.scene_id).wrapping_mul(0x2545_f491_4f6c_dd1d),
            ..*p
        });
        let p = model.perceive(&record.scene, scene_pert.as_ref(), 0)?;
        for node in &p.graph.nodes {
            pool.push(node.clone());
        }
        by_scene.insert(record.scene_id, p);
    }
    let mut out = Vec::new();
    for inst in ds.instructions_in(split).filter(|i| i.ambiguity == Ambiguity::Unambiguous) {
        let goal = inst.subgoal()?;
        let tokens = inst.instruction().tokens;
        let true_id = *inst.referent_ids.iter().next().expect("unambiguous has one referent");
        let node = by_scene[&inst.scene_id]
            .graph
            .nodes
            .iter()
            .find(|n| n.id == true_id)
            .ok_or(Error::TrueEntityAbsent(true_id))?;
        let distractors: Vec<_> = pool.iter().filter(|e| !goal.matches_attr(&e.attr)).collect();
        if distractors.is_empty() && n > 1 {
            return Err(Error::InsufficientEntities { needed: n, available: 1 });
        }
        let chosen: Vec<usize> = if distractors.len() >= n - 1 {
            sample(&mut rng, distractors.len(), n - 1).into_vec()
        } else {
            (0..n - 1).map(|_| rng.random_range(0..distractors.len())).collect()
        };
        let mut rows = vec![node.row()];
        rows.extend(chosen.iter().map(|&i| distractors[i].row()));
        let ids: Vec<u32> = (0..n as u32).collect();
        let (goal_out, _) = saca_forward_rows(&model.query_features(&tokens, &goal), &rows, &ids, &model.saca)?;
        out.push(RetrievalEpisode {
            candidate_ids: ids,
            logits: goal_out.logits,
            true_id: 0,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub ece: f64,
    pub fpr_at_95: f64,
    pub cov_at_95: f64,
    pub clar_at_ambig: f64,
    pub unambig_sr: f64,
    pub total: f64,
    /// Unambiguous success rate when never clarifying.
    pub always_act_unambig_sr: f64,
    pub threshold: f64,
    pub degenerate_threshold: bool,
    pub mean_entropy_ambiguous: f64,
    pub mean_entropy_unambiguous: f64,
    /// Recall@1 keyed by candidate set size.
    pub recall_at_1: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub policy: SelectivePolicy,
    pub val_logs: Vec<EpisodeLog>,
    pub test_logs: Vec<EpisodeLog>,
    pub curve: Vec<RiskCoveragePoint>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Report over scored test episodes with a policy calibrated elsewhere.
pub fn metrics_report(test: &[ScoredEpisode], policy: &SelectivePolicy, recall_at_1: BTreeMap<usize, f64>) -> Result<MetricsReport> {
    let scores: Vec<(f64, bool)> = test.iter().map(|e| (e.entropy, e.is_ambiguous)).collect();
    let confidences: Vec<f64> = test.iter().map(|e| confidence_from_entropy(e.entropy, e.n_entities)).collect();
    let outcomes: Vec<bool> = test.iter().map(|e| e.act_success).collect();
    let decided = apply_policy(test, policy);
    let always = apply_policy(test, &SelectivePolicy::always_act());
    Ok(MetricsReport {
        episodes: test.len(),
        auroc: auroc(&scores)?,
        aupr: aupr(&scores)?,
        ece: ece(&confidences, &outcomes, ECE_BINS)?,
        fpr_at_95: fpr_at_95(&scores)?,
        cov_at_95: cov_at_95(test),
        clar_at_ambig: clar_at_ambig(&decided),
        unambig_sr: unambig_sr(&decided),
        total: total_score(&decided),
        always_act_unambig_sr: unambig_sr(&always),
        threshold: policy.threshold,
        degenerate_threshold: policy.degenerate,
        mean_entropy_ambiguous: mean(test.iter().filter(|e| e.is_ambiguous).map(|e| e.entropy)),
        mean_entropy_unambiguous: mean(test.iter().filter(|e| !e.is_ambiguous).map(|e| e.entropy)),
        recall_at_1,
    })
}

/// Calibrates the clarify threshold on validation episodes, then measures
/// everything on test episodes only.
pub fn evaluate(model: &GroundingModel, ds: &CabDataset, target: CalibrationTarget, seed: u64) -> Result<EvalOutcome> {
    let val_logs = run_split(model, ds, Split::Val, None)?;
    let test_logs = run_split(model, ds, Split::Test, None)?;
    let test_scenes: BTreeSet<u32> = ds.scene_ids(Split::Test).into_iter().collect();
    if let Some(bad) = test_logs.iter().find(|l| !test_scenes.contains(&l.scene_id)) {
        return Err(Error::SplitMix(format!("episode {} is not from a test scene", bad.episode_id)));
    }
    let val: Vec<ScoredEpisode> = val_logs.iter().map(EpisodeLog::scored).collect();
    let test: Vec<ScoredEpisode> = test_logs.iter().map(EpisodeLog::scored).collect();
    let policy = calibrate_threshold(&val, target)?;
    let mut recall = BTreeMap::new();
    for n in RETRIEVAL_SIZES {
        recall.insert(n, recall_at_k(&retrieval_episodes(model, ds, Split::Test, n, None, seed)?, 1)?);
    }
    let report = metrics_report(&test, &policy, recall)?;
    Ok(EvalOutcome {
        curve: risk_coverage_curve(&test),
        report,
        policy,
        val_logs,
        test_logs,
    })
}

/// Ranks of the true candidate, for logging alongside episodes.
pub fn retrieval_ranks(episodes: &[RetrievalEpisode]) -> Result<Vec<usize>> {
    episodes.iter().map(rank_of_true).collect()
}

pub fn risk_coverage_csv(curve: &[RiskCoveragePoint]) -> String {
    let mut s = String::from("threshold,coverage,risk\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.coverage, p.risk));
    }
    s
}
