//! Verified grounding for desk-scale vision-language-action agents.
//!
//! The pipeline runs in five stages:
//!
//! - [`planner`] turns an instruction into a symbolic sub-goal template,
//! - [`gsm`] lifts a scene into entity nodes and keeps a bounded FIFO memory,
//! - [`saca`] cross-attends from the sub-goal to the entities and yields the
//!   verified goal embedding together with its attention entropy,
//! - [`policy`] acts on the verified goal only,
//! - [`selective`] abstains with a clarification request when the entropy is high.
//!
//! [`learn`] trains the pipeline with an imitation loss plus a contrastive
//! grounding loss, [`cab_bench`] regenerates the ambiguity benchmark, and
//! [`metrics`], [`eval`] and [`theory`] measure everything.

pub mod cab_bench;
pub mod digest;
pub mod error;
pub mod eval;
pub mod gsm;
pub mod jsonl;
pub mod learn;
pub mod linalg;
pub mod metrics;
pub mod planner;
pub mod policy;
pub mod saca;
pub mod selective;
pub mod theory;
pub mod world_sim;

#[cfg(test)]
pub(crate) mod fd;

pub use error::{Error, Result};
