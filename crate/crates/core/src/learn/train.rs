use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cab_bench::{CabDataset, Split};
use crate::gsm::{EntitySet, APPEARANCE_DIM};
use crate::planner::SymbolicSubGoal;
use crate::policy::policy_backward;
use crate::saca::saca_backward;
use crate::{Error, Result};

use super::action::action_loss;
use super::checkpoint::Checkpoint;
use super::data::TrainingSet;
use super::gac::gac_loss;
use super::model::{Ablation, Conditioning, GroundingModel, Perception};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    /// Demonstration samples per optimizer step.
    pub batch_size: usize,
    /// Contrastive candidate count N: one positive and N − 1 negatives.
    pub batch_n: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub conditioning: Conditioning,
    pub segmenter_noise: f64,
    pub demos_per_instruction: usize,
    pub hidden: usize,
    pub init_scale: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Imitate demonstrations of ambiguous instructions as well. Their
    /// referent is an arbitrary pick among the matches, so by default they
    /// only feed the contrastive term.
    pub ambiguous_action: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 0.07,
            lr: 0.05,
            momentum: 0.9,
            steps: 20_000,
            batch_size: 32,
            batch_n: 16,
            seed: 0,
            ablation: Ablation::Full,
            conditioning: Conditioning::VerifiedGoal,
            segmenter_noise: 0.0,
            demos_per_instruction: 4,
            hidden: 64,
            init_scale: 1.0,
            clip_norm: 5.0,
            ambiguous_action: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("lr must be positive and momentum in [0, 1)");
        }
        if self.batch_size == 0 || self.batch_n < 2 || self.hidden == 0 || self.demos_per_instruction == 0 {
            return bad("batch_size, hidden and demos_per_instruction must be positive and batch_n at least 2");
        }
        if !(0.0..=1.0).contains(&self.segmenter_noise) {
            return bad("segmenter_noise must lie in [0, 1]");
        }
        if !(self.init_scale > 0.0) || !(self.clip_norm >= 0.0) {
            return bad("init_scale must be positive and clip_norm nonnegative");
        }
        Ok(())
    }

    /// Weight actually applied to the contrastive term.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation == Ablation::NoGac {
            0.0
        } else {
            self.lambda
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub action_loss: f64,
    pub gac_loss: f64,
    pub total: f64,
    pub batch_n: usize,
}

impl LossReport {
    pub fn new(action_loss: f64, gac_loss: f64, lambda: f64, batch_n: usize) -> Self {
        Self {
            action_loss,
            gac_loss,
            total: action_loss + lambda * gac_loss,
            batch_n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub action_loss: f64,
    pub gac_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
}

/// One demonstration step plus the contrastive candidates drawn for it.
struct Sample {
    /// Demonstration step imitated by the action loss.
    demo: usize,
    step: usize,
    /// Demonstration whose alignment pair feeds the contrastive term.
    pair_demo: usize,
    /// Same-scene negatives by id, then (scene index, object index) from elsewhere.
    local_negatives: Vec<u32>,
    foreign_negatives: Vec<(usize, usize)>,
}

/// Negatives for one alignment pair: other entities of the same scene first,
/// then entities of other scenes. Entities that satisfy the sub-goal are never
/// negatives.
fn draw_negatives<R: Rng + ?Sized>(
    set: &TrainingSet,
    scene_idx: usize,
    positive: u32,
    subgoal: &SymbolicSubGoal,
    batch_n: usize,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<(usize, usize)>)> {
    let others: Vec<u32> = set.scenes[scene_idx]
        .objects
        .iter()
        .filter(|o| o.id != positive && !subgoal.matches_object(o))
        .map(|o| o.id)
        .collect();
    let want = batch_n - 1;
    let local: Vec<u32> = if others.len() > want {
        sample(rng, others.len(), want).into_iter().map(|i| others[i]).collect()
    } else {
        others
    };
    let mut foreign = Vec::with_capacity(want - local.len());
    if local.len() < want {
        let pool: Vec<(usize, usize)> = set
            .scenes
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != scene_idx || set.scenes.len() == 1)
            .flat_map(|(s, scene)| {
                scene
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| !subgoal.matches_object(o))
                    .map(move |(o, _)| (s, o))
            })
            .collect();
        if pool.is_empty() {
            return Err(Error::InsufficientEntities {
                needed: want,
                available: local.len(),
            });
        }
        while local.len() + foreign.len() < want {
            foreign.push(pool[rng.random_range(0..pool.len())]);
        }
    }
    Ok((local, foreign))
}

/// Contrastive term for one query; returns the loss and accumulates
/// `weight`-scaled gradients.
#[allow(clippy::too_many_arguments)]
fn contrastive(
    model: &GroundingModel,
    query_features: &[f64],
    positive: (&[f64], Option<&crate::gsm::EncoderCache>),
    negatives: &[(Vec<f64>, Option<crate::gsm::EncoderCache>)],
    tau: f64,
    weight: f64,
    grad: Option<&mut GroundingModel>,
) -> Result<f64> {
    let q = model.saca.query(query_features);
    let k_pos = model.saca.key(positive.0);
    let k_neg: Vec<Vec<f64>> = negatives.iter().map(|(r, _)| model.saca.key(r)).collect();
    let out = gac_loss(&q, &k_pos, &k_neg, tau)?;
    if let Some(grad) = grad {
        if weight != 0.0 {
            let scaled = |v: &[f64]| v.iter().map(|x| weight * x).collect::<Vec<f64>>();
            grad.saca.w_q.add_outer(1.0, &scaled(&out.d_query), query_features);
            let rows = std::iter::once((positive.0, positive.1, &out.d_positive))
                .chain(negatives.iter().zip(&out.d_negatives).map(|((r, c), d)| (r.as_slice(), c.as_ref(), d)));
            for (row, cache, d_key) in rows {
                let d_key = scaled(d_key);
                grad.saca.w_k.add_outer(1.0, &d_key, row);
                if let Some(cache) = cache {
                    let d_row = model.saca.w_k.matvec_t(&d_key);
                    model.encoder.backward(cache, &d_row[..APPEARANCE_DIM], &mut grad.encoder);
                }
            }
        }
    }
    Ok(out.loss)
}

fn row_and_cache(p: &Perception, index: usize) -> (Vec<f64>, Option<crate::gsm::EncoderCache>) {
    (p.graph.nodes[index].row(), p.caches.get(index).cloned())
}

fn sample_gradient(
    model: &GroundingModel,
    set: &TrainingSet,
    sample: &Sample,
    scene_perceptions: &[Perception],
    config: &TrainConfig,
) -> Result<(GroundingModel, f64, f64)> {
    let demo = &set.demos[sample.demo];
    let cmd = &set.commands[demo.command_idx];
    let step = &demo.trajectory.steps[sample.step];
    let mut scene = set.scenes[cmd.scene_idx].clone();
    scene.gripper_position = step.gripper_position;

    let perception = model.perceive(&scene, None, 0)?;
    let obs = perception.graph.observation_summary();
    let entities = EntitySet::from_nodes(perception.graph.nodes.clone())?;
    let fwd = model.act(entities, obs, scene.gripper_position, &cmd.tokens, &cmd.subgoal)?;

    let mut grad = model.zeros_like();
    let expert = step.action.normalized();
    let (a_loss, d_out) = action_loss(&fwd.policy_cache.output, &expert)?;
    let d_out: [f64; 4] = d_out.try_into().expect("four action components");
    let dx = policy_backward(&model.policy, &fwd.policy_cache, &d_out, &mut grad.policy);
    if model.conditioning == Conditioning::VerifiedGoal {
        let d_g = &dx[..model.saca.d()];
        let inputs = saca_backward(&model.saca, &fwd.saca_cache, d_g, &mut grad.saca)?;
        for (cache, d_row) in perception.caches.iter().zip(&inputs.d_rows) {
            model.encoder.backward(cache, &d_row[..APPEARANCE_DIM], &mut grad.encoder);
        }
    }

    let pair_demo = &set.demos[sample.pair_demo];
    let pair_cmd = &set.commands[pair_demo.command_idx];
    let home = &scene_perceptions[pair_cmd.scene_idx];
    let index = |id: u32| home.graph.nodes.iter().position(|n| n.id == id).expect("id from this scene");
    let (pos_row, pos_cache) = row_and_cache(home, index(pair_demo.pair.positive_entity_id));
    let mut negatives: Vec<_> = sample.local_negatives.iter().map(|id| row_and_cache(home, index(*id))).collect();
    for &(s, o) in &sample.foreign_negatives {
        negatives.push(row_and_cache(&scene_perceptions[s], o));
    }
    let g_loss = contrastive(
        model,
        &model.query_features(&pair_cmd.tokens, &pair_cmd.subgoal),
        (&pos_row, pos_cache.as_ref()),
        &negatives,
        config.tau,
        config.effective_lambda(),
        Some(&mut grad),
    )?;
    Ok((grad, a_loss, g_loss))
}

fn diagnostic(model: &GroundingModel, a: f64, g: f64) -> String {
    let norms: Vec<String> = model
        .blocks()
        .iter()
        .map(|(name, b)| format!("{name}={:.3e}", b.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    format!("action_loss={a} gac_loss={g} param_norms[{}]", norms.join(" "))
}

/// Mean contrastive loss over every demonstration's alignment pair with
/// negatives drawn from a fixed seed; used for end-of-training reporting.
pub fn mean_gac_loss(model: &GroundingModel, set: &TrainingSet, batch_n: usize, tau: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perceptions = set
        .scenes
        .iter()
        .map(|s| model.perceive(s, None, 0))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for demo in &set.demos {
        let cmd = &set.commands[demo.command_idx];
        let p = &perceptions[cmd.scene_idx];
        let index = |id: u32| p.graph.nodes.iter().position(|n| n.id == id).expect("id from this scene");
        let (local, foreign) = draw_negatives(set, cmd.scene_idx, demo.pair.positive_entity_id, &cmd.subgoal, batch_n, &mut rng)?;
        let (pos_row, _) = row_and_cache(p, index(demo.pair.positive_entity_id));
        let mut negatives: Vec<_> = local.iter().map(|id| (p.graph.nodes[index(*id)].row(), None)).collect();
        negatives.extend(foreign.iter().map(|&(s, o)| (perceptions[s].graph.nodes[o].row(), None)));
        total += contrastive(model, &model.query_features(&cmd.tokens, &cmd.subgoal), (&pos_row, None), &negatives, tau, 0.0, None)?;
    }
    Ok(total / set.demos.len() as f64)
}

/// Trains on the dataset's train split. Per-sample gradients run in
/// parallel and are reduced in sample order, so results do not depend on
/// the worker count.
pub fn train(config: &TrainConfig, dataset: &CabDataset) -> Result<TrainOutcome> {
    config.validate()?;
    let set = TrainingSet::build(dataset, Split::Train, config.demos_per_instruction, config.segmenter_noise, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut model = GroundingModel::new(config.ablation, config.conditioning, config.hidden, config.init_scale, &mut rng);
    let mut velocity = model.zeros_like();
    let imitated: Vec<usize> = (0..set.demos.len())
        .filter(|&i| config.ambiguous_action || !set.commands[set.demos[i].command_idx].ambiguous)
        .collect();
    let lambda = config.effective_lambda();
    let mut curve = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut samples = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let demo = imitated[rng.random_range(0..imitated.len())];
            let t = rng.random_range(0..set.demos[demo].trajectory.steps.len());
            let pair_demo = rng.random_range(0..set.demos.len());
            let d = &set.demos[pair_demo];
            let cmd = &set.commands[d.command_idx];
            let (local_negatives, foreign_negatives) =
                draw_negatives(&set, cmd.scene_idx, d.pair.positive_entity_id, &cmd.subgoal, config.batch_n, &mut rng)?;
            samples.push(Sample {
                demo,
                step: t,
                pair_demo,
                local_negatives,
                foreign_negatives,
            });
        }
        let perceptions = set
            .scenes
            .par_iter()
            .map(|s| model.perceive(s, None, 0))
            .collect::<Result<Vec<_>>>()?;
        let results = samples
            .par_iter()
            .map(|s| sample_gradient(&model, &set, s, &perceptions, config))
            .collect::<Result<Vec<_>>>()?;

        let mut grad = model.zeros_like();
        let (mut a_sum, mut g_sum) = (0.0, 0.0);
        for (g, a, c) in &results {
            a_sum += a;
            g_sum += c;
            for ((_, dst), (_, src)) in grad.blocks_mut().into_iter().zip(g.blocks()) {
                for (x, y) in dst.iter_mut().zip(src) {
                    *x += y;
                }
            }
        }
        let b = config.batch_size as f64;
        let (a_mean, g_mean) = (a_sum / b, g_sum / b);
        if !a_mean.is_finite() || !g_mean.is_finite() {
            return Err(Error::NanLoss {
                step,
                diagnostic: diagnostic(&model, a_mean, g_mean),
            });
        }
        let mut sq = 0.0;
        for (_, block) in grad.blocks_mut() {
            for v in block.iter_mut() {
                *v /= b;
                sq += *v * *v;
            }
        }
        let norm = sq.sqrt();
        let clip = if config.clip_norm > 0.0 && norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
        {
            let grads = grad.blocks();
            for (((_, p), (_, v)), (_, g)) in model.blocks_mut().into_iter().zip(velocity.blocks_mut()).zip(grads) {
                for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = config.momentum * *v + clip * g;
                    *p -= config.lr * *v;
                }
            }
        }
        if !model.is_finite() {
            return Err(Error::NanLoss {
                step,
                diagnostic: diagnostic(&model, a_mean, g_mean),
            });
        }
        let report = LossReport::new(a_mean, g_mean, lambda, config.batch_n);
        curve.push(CurvePoint {
            step,
            action_loss: report.action_loss,
            gac_loss: report.gac_loss,
            total: report.total,
        });
    }

    let final_gac = mean_gac_loss(&model, &set, config.batch_n, config.tau, config.seed ^ 0xfeed)?;
    let final_action = curve.iter().rev().take(50).map(|c| c.action_loss).sum::<f64>() / curve.len().clamp(1, 50) as f64;
    let checkpoint = Checkpoint::new(config.clone(), dataset.digest()?, model, LossReport::new(final_action, final_gac, lambda, config.batch_n))?;
    Ok(TrainOutcome { checkpoint, curve })
}

pub fn write_curve_csv(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut text = String::from("step,action_loss,gac_loss,total\n");
    for c in curve {
        text.push_str(&format!("{},{},{},{}\n", c.step, c.action_loss, c.gac_loss, c.total));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
