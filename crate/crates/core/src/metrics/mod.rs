//! Evaluation metrics: ambiguity ranking and calibration, retrieval recall,
//! selective-prediction summaries and plug-in information estimates.

mod calibration;
mod information;
mod ranking;
mod retrieval;

pub use calibration::{confidence_from_entropy, ece, ECE_BINS};
pub use information::{
    conditional_mutual_information, language_influence, mutual_information, plugin_entropy,
    quantize_action, ActionObservation, InfluenceTrace, LanguageInfluenceEstimate,
};
pub use ranking::{aupr, auroc, auroc_half_units, fpr_at_95};
pub use retrieval::{rank_of_true, recall_at_k, RetrievalEpisode};

use serde::{Deserialize, Serialize};

/// One evaluated episode as seen by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEpisode {
    pub entropy: f64,
    /// Number of attended entities; normalizes the entropy for calibration.
    pub n_entities: usize,
    pub is_ambiguous: bool,
    /// Acting would have succeeded: an unambiguous instruction whose
    /// closed-loop execution grasped the referent.
    pub act_success: bool,
    pub clarified: bool,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_rank: Option<usize>,
}

impl ScoredEpisode {
    /// Scores under a decision: ambiguous episodes succeed only by
    /// clarifying; unambiguous ones only by acting successfully.
    pub fn decided(mut self, clarify: bool) -> Self {
        self.clarified = clarify;
        self.succeeded = if self.is_ambiguous { clarify } else { !clarify && self.act_success };
        self
    }
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Share of ambiguous episodes that asked for clarification.
pub fn clar_at_ambig(episodes: &[ScoredEpisode]) -> f64 {
    let amb: Vec<_> = episodes.iter().filter(|e| e.is_ambiguous).collect();
    fraction(amb.iter().filter(|e| e.clarified).count(), amb.len())
}

/// Success rate on unambiguous episodes; a clarification counts as failure.
pub fn unambig_sr(episodes: &[ScoredEpisode]) -> f64 {
    let un: Vec<_> = episodes.iter().filter(|e| !e.is_ambiguous).collect();
    fraction(un.iter().filter(|e| e.succeeded).count(), un.len())
}

/// Macro average of [`clar_at_ambig`] and [`unambig_sr`].
pub fn total_score(episodes: &[ScoredEpisode]) -> f64 {
    (clar_at_ambig(episodes) + unambig_sr(episodes)) / 2.0
}
