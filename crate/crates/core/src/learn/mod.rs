//! Training: alignment pairs, the contrastive grounding loss, the imitation
//! loss, SGD with momentum, checkpoints and the contrastive bound check.

mod action;
mod bound;
mod checkpoint;
mod data;
mod gac;
mod model;
mod pairs;
mod train;

pub use action::action_loss;
pub use bound::{
    bound_items, infonce_estimate, perfect_critic_expected_loss, verify_infonce_bound, BoundCheck,
    BoundItem, BoundReport, NegativeSampling, BOUND_BATCH_SIZES,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use data::{Command, Demo, TrainingSet};
pub use gac::{cosine, gac_loss, GacOutput};
pub use model::{Ablation, Conditioning, GroundingModel, Perception, StepForward};
pub use pairs::{generate_alignment_pair, generate_alignment_pairs, nearest_entity, AlignmentPair};
pub use train::{mean_gac_loss, train, write_curve_csv, CurvePoint, LossReport, TrainConfig, TrainOutcome};
