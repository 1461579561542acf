use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cab_bench::{CabDataset, Split};
use crate::gsm::ground_truth_entities;
use crate::planner::{extract_template, SymbolicSubGoal};
use crate::world_sim::{scripted_demonstration_from, Scene, Trajectory, GRIPPER_START_HEIGHT};
use crate::{Error, Result};

use super::pairs::{generate_alignment_pair, AlignmentPair};

/// A parsed instruction bound to its scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub instruction_id: u32,
    pub scene_idx: usize,
    pub tokens: Vec<String>,
    pub subgoal: SymbolicSubGoal,
    pub ambiguous: bool,
    pub referent_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub command_idx: usize,
    pub trajectory: Trajectory,
    pub pair: AlignmentPair,
}

/// Demonstrations for every instruction of one split. Each instruction is
/// demonstrated from several random gripper starts; ambiguous instructions
/// reach a referent drawn at random per demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub scenes: Vec<Scene>,
    pub scene_ids: Vec<u32>,
    pub commands: Vec<Command>,
    pub demos: Vec<Demo>,
}

impl TrainingSet {
    pub fn commands_for(ds: &CabDataset, split: Split) -> Result<(Vec<Scene>, Vec<u32>, Vec<Command>)> {
        let records: Vec<_> = ds.scenes_in(split).collect();
        let scenes: Vec<Scene> = records.iter().map(|r| r.scene.clone()).collect();
        let scene_ids: Vec<u32> = records.iter().map(|r| r.scene_id).collect();
        let mut commands = Vec::new();
        for inst in ds.instructions_in(split) {
            let scene_idx = scene_ids
                .iter()
                .position(|id| *id == inst.scene_id)
                .ok_or_else(|| Error::SplitMix(format!("instruction {} scene outside {split}", inst.instruction_id)))?;
            let instruction = inst.instruction();
            commands.push(Command {
                instruction_id: inst.instruction_id,
                scene_idx,
                subgoal: extract_template(&instruction)?,
                tokens: instruction.tokens,
                ambiguous: inst.ambiguity == crate::planner::Ambiguity::Ambiguous,
                referent_ids: inst.referent_ids.iter().copied().collect(),
            });
        }
        Ok((scenes, scene_ids, commands))
    }

    pub fn build(
        ds: &CabDataset,
        split: Split,
        demos_per_instruction: usize,
        segmenter_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let (scenes, scene_ids, commands) = Self::commands_for(ds, split)?;
        let entity_sets = scenes.iter().map(ground_truth_entities).collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut demos = Vec::with_capacity(commands.len() * demos_per_instruction);
        for (command_idx, cmd) in commands.iter().enumerate() {
            let scene = &scenes[cmd.scene_idx];
            for _ in 0..demos_per_instruction {
                let target = cmd.referent_ids[rng.random_range(0..cmd.referent_ids.len())];
                let start = [rng.random_range(0.1..=0.9), rng.random_range(0.1..=0.9), GRIPPER_START_HEIGHT];
                let trajectory = scripted_demonstration_from(scene, target, start)?;
                let over_time = vec![entity_sets[cmd.scene_idx].clone(); trajectory.steps.len()];
                let pair = generate_alignment_pair(
                    cmd.subgoal,
                    scene_ids[cmd.scene_idx],
                    &trajectory,
                    &over_time,
                    segmenter_noise,
                    &mut rng,
                )?;
                demos.push(Demo {
                    command_idx,
                    trajectory,
                    pair,
                });
            }
        }
        Ok(Self {
            scenes,
            scene_ids,
            commands,
            demos,
        })
    }
}
