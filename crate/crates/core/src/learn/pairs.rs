//! Alignment pairs from demonstrations: the positive entity is whichever
//! tracked entity sits closest to the gripper when the demonstration ends.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gsm::{EntityNode, EntitySet};
use crate::linalg::distance;
use crate::planner::SymbolicSubGoal;
use crate::world_sim::{Trajectory, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub subgoal: SymbolicSubGoal,
    pub positive_entity_id: u32,
    pub scene_ref: u32,
    pub t_end: usize,
    pub label_noise_flag: bool,
}

/// Id of the entity nearest to `point`; equal distances go to the lowest id.
pub fn nearest_entity(entities: &[EntityNode], point: &Vec3) -> Result<u32> {
    entities
        .iter()
        .map(|e| (distance(&e.position, point), e.id))
        .reduce(|best, cur| if cur.0 < best.0 || (cur.0 == best.0 && cur.1 < best.1) { cur } else { best })
        .map(|(_, id)| id)
        .ok_or(Error::EmptyEntities)
}

/// `entities_over_time[t]` holds the tracked entities at step `t`.
pub fn generate_alignment_pair<R: Rng + ?Sized>(
    subgoal: SymbolicSubGoal,
    scene_ref: u32,
    trajectory: &Trajectory,
    entities_over_time: &[EntitySet],
    segmenter_noise: f64,
    rng: &mut R,
) -> Result<AlignmentPair> {
    if trajectory.steps.is_empty() {
        return Err(Error::InvalidArgument("trajectory has no steps".into()));
    }
    if !(0.0..=1.0).contains(&segmenter_noise) {
        return Err(Error::InvalidArgument(format!("segmenter noise {segmenter_noise} outside [0, 1]")));
    }
    let t_end = trajectory.t_end();
    let entities = entities_over_time
        .get(t_end)
        .filter(|set| !set.is_empty())
        .ok_or(Error::NoEntitiesAtStep(t_end))?;
    let mut positive = nearest_entity(&entities.entities, &trajectory.final_gripper_position)?;
    let mut flagged = false;
    // draw unconditionally so the stream does not depend on scene size
    let flip = rng.random_bool(segmenter_noise);
    let pick = rng.random_range(0..entities.len().max(2) - 1);
    if flip && entities.len() > 1 {
        let others: Vec<u32> = entities.ids().into_iter().filter(|id| *id != positive).collect();
        positive = others[pick % others.len()];
        flagged = true;
    }
    Ok(AlignmentPair {
        subgoal,
        positive_entity_id: positive,
        scene_ref,
        t_end,
        label_noise_flag: flagged,
    })
}

pub fn generate_alignment_pairs<R: Rng + ?Sized>(
    demos: &[(SymbolicSubGoal, u32, &Trajectory)],
    entities_over_time: &[&[EntitySet]],
    segmenter_noise: f64,
    rng: &mut R,
) -> Result<Vec<AlignmentPair>> {
    demos
        .iter()
        .zip(entities_over_time)
        .map(|((goal, scene_ref, traj), ents)| {
            generate_alignment_pair(*goal, *scene_ref, traj, ents, segmenter_noise, rng)
        })
        .collect()
}
