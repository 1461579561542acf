use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEpisode {
    pub candidate_ids: Vec<u32>,
    pub logits: Vec<f64>,
    pub true_id: u32,
}

/// 1-based rank of the true candidate; every other candidate with a logit
/// at least as large ranks ahead of it.
pub fn rank_of_true(episode: &RetrievalEpisode) -> Result<usize> {
    if episode.candidate_ids.len() != episode.logits.len() {
        return Err(Error::DimensionMismatch {
            context: "retrieval logits",
            expected: episode.candidate_ids.len(),
            actual: episode.logits.len(),
        });
    }
    let t = episode
        .candidate_ids
        .iter()
        .position(|id| *id == episode.true_id)
        .ok_or(Error::TrueEntityAbsent(episode.true_id))?;
    let ahead = (0..episode.logits.len())
        .filter(|&j| j != t && episode.logits[j] >= episode.logits[t])
        .count();
    Ok(ahead + 1)
}

/// Fraction of episodes whose true candidate ranks within the top `k`.
pub fn recall_at_k(episodes: &[RetrievalEpisode], k: usize) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("recall over zero episodes".into()));
    }
    let mut hits = 0usize;
    for e in episodes {
        if rank_of_true(e)? <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / episodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_always_recalled() {
        let e = RetrievalEpisode {
            candidate_ids: vec![5],
            logits: vec![-3.0],
            true_id: 5,
        };
        assert_eq!(recall_at_k(&[e], 1).unwrap(), 1.0);
    }

    #[test]
    fn ties_are_pessimistic_and_absence_errors() {
        let e = RetrievalEpisode {
            candidate_ids: vec![0, 1, 2],
            logits: vec![1.0, 1.0, 0.0],
            true_id: 0,
        };
        assert_eq!(rank_of_true(&e).unwrap(), 2);
        let missing = RetrievalEpisode { true_id: 9, ..e };
        assert!(matches!(rank_of_true(&missing), Err(Error::TrueEntityAbsent(9))));
    }
}
