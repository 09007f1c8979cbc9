use std::collections::BTreeMap;

use super::{rank_order, Hit, RetrievalWeights, StoreError};
use crate::ingest::Scope;

/// Per-scope scores for every candidate in the union of the hit lists.
/// `None` marks a scope whose list did not contain the candidate.
pub type ScoreTable = BTreeMap<u64, [Option<f64>; 4]>;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedCandidate {
    pub segment_id: u64,
    pub per_k_scores: [Option<f64>; 4],
    pub fused_score: f64,
}

/// Union of the hit lists, keyed by segment.
pub fn score_table(lists: &[(Scope, Vec<Hit>)]) -> ScoreTable {
    let mut table = ScoreTable::new();
    for (scope, hits) in lists {
        for h in hits {
            table.entry(h.segment_id).or_insert([None; 4])[scope.index()] = Some(h.score);
        }
    }
    table
}

/// Weighted sum with absent scores counted as zero; keeps the best `q`,
/// ordered by fused score then ascending segment id. Candidates seen only in
/// zero-weight scopes are dropped.
pub fn fuse(
    table: ScoreTable,
    weights: &RetrievalWeights,
    q: usize,
) -> Result<Vec<FusedCandidate>, StoreError> {
    if table.is_empty() {
        return Err(StoreError::NoCandidates);
    }
    let w = weights.as_array();
    let mut fused: Vec<FusedCandidate> = table
        .into_iter()
        .filter(|(_, scores)| scores.iter().zip(w).any(|(s, w)| s.is_some() && w > 0.0))
        .map(|(segment_id, per_k_scores)| FusedCandidate {
            segment_id,
            fused_score: per_k_scores
                .iter()
                .zip(w)
                .map(|(s, w)| w * s.unwrap_or(0.0))
                .sum(),
            per_k_scores,
        })
        .collect();
    if fused.is_empty() {
        return Err(StoreError::NoCandidates);
    }
    fused.sort_by(|a, b| rank_order((a.fused_score, a.segment_id), (b.fused_score, b.segment_id)));
    fused.truncate(q);
    Ok(fused)
}

/// Fuses per-scope hit lists into the top `q` candidates.
pub fn weighted_rerank(
    lists: &[(Scope, Vec<Hit>)],
    weights: &RetrievalWeights,
    q: usize,
) -> Result<Vec<FusedCandidate>, StoreError> {
    fuse(score_table(lists), weights, q)
}
