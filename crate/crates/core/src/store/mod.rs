//! Multi-vector segment index.
//!
//! Every indexed segment owns four records, one per [`Scope`]. Search runs
//! per scope over unit vectors (cosine = dot product, accumulated in `f64`),
//! and the per-scope hit lists are fused with convex weights into the final
//! ranked context set.

mod persist;
mod rerank;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;
use crate::features::FeatureBundle;
use crate::ingest::Scope;
use crate::scalar::Scalar;

pub use persist::{load_store, read_store, save_store, write_store, STORE_MAGIC, STORE_VERSION};
pub use rerank::{fuse, score_table, weighted_rerank, FusedCandidate, ScoreTable};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("segment {0} is already indexed")]
    DuplicateSegment(u64),
    #[error("vector dimension {actual} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no records indexed for scope {0}")]
    EmptyIndex(Scope),
    #[error("no candidates to re-rank")]
    NoCandidates,
    #[error("store holds {store:?} texts, refusing a {insert:?} segment")]
    ModeMismatch { store: TextMode, insert: TextMode },
    #[error("invalid retrieval weights: {0}")]
    InvalidWeights(String),
    #[error("invalid retrieval parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown segment {0}")]
    UnknownSegment(u64),
    #[error("store file corrupt: {0}")]
    CorruptStore(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the stored feature texts are: statistic templates or LLM descriptors.
/// A store holds one kind only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    Template,
    Descriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub segment_id: u64,
    pub scope: Scope,
    pub label: String,
    pub user_id: String,
    pub feature_text: String,
    pub vector: Vec<f32>,
}

/// Input for [`VectorStore::index_segment`].
#[derive(Debug, Clone)]
pub struct SegmentEntry {
    pub segment_id: u64,
    pub label: String,
    pub user_id: String,
    /// Texts in `Full, Start, Mid, End` order.
    pub texts: [String; 4],
    pub vectors: [EmbeddingVector; 4],
}

/// Non-negative per-scope weights summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RetrievalWeights([f64; 4]);

impl RetrievalWeights {
    pub fn new(w: [f64; 4]) -> Result<Self, StoreError> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(StoreError::InvalidWeights(format!(
                "weights must be finite and >= 0, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(StoreError::InvalidWeights(format!(
                "weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self(w))
    }

    pub fn get(&self, scope: Scope) -> f64 {
        self.0[scope.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for RetrievalWeights {
    /// Full window weighted twice as much as each third.
    fn default() -> Self {
        Self([0.4, 0.2, 0.2, 0.2])
    }
}

impl TryFrom<[f64; 4]> for RetrievalWeights {
    type Error = StoreError;

    fn try_from(w: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<RetrievalWeights> for [f64; 4] {
    fn from(w: RetrievalWeights) -> Self {
        w.0
    }
}

/// How a candidate missing from some scope's hit list is scored there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingScorePolicy {
    /// Absent scores contribute 0 to the fused sum.
    #[default]
    ZeroFill,
    /// Absent scores are computed exactly against the stored vector.
    Rescore,
}

/// Search/fusion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalParams {
    pub weights: RetrievalWeights,
    /// Hits per scope list; `None` means `3 * q`.
    pub p: Option<usize>,
    pub q: usize,
    pub missing_scores: MissingScorePolicy,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            weights: RetrievalWeights::default(),
            p: None,
            q: 10,
            missing_scores: MissingScorePolicy::ZeroFill,
        }
    }
}

impl RetrievalParams {
    pub fn per_scope_hits(&self) -> usize {
        self.p.unwrap_or(3 * self.q)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.q == 0 {
            return Err(StoreError::InvalidParameter("q must be >= 1".into()));
        }
        if self.per_scope_hits() == 0 {
            return Err(StoreError::InvalidParameter("p must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub segment_id: u64,
    pub score: f64,
}

/// A re-ranked training segment with its metadata: the evidence handed to the
/// classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalContext {
    pub segment_id: u64,
    pub label: String,
    pub user_id: String,
    pub per_k_scores: [Option<f64>; 4],
    pub fused_score: f64,
    pub feature_texts: [String; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    mode: Option<TextMode>,
    records: Vec<EmbeddingRecord>,
    lanes: [Vec<usize>; 4],
    by_segment: HashMap<u64, usize>,
}

/// Score-descending, then segment-ascending.
pub(crate) fn rank_order(a: (f64, u64), b: (f64, u64)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Dot product accumulated in `f64`, in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |acc, (&x, &y)| acc + x as f64 * y as f64)
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            mode: None,
            records: Vec::new(),
            lanes: Default::default(),
            by_segment: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Option<TextMode> {
        self.mode
    }

    /// Number of records (four per segment).
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn segment_count(&self) -> usize {
        self.by_segment.len()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn contains(&self, segment_id: u64) -> bool {
        self.by_segment.contains_key(&segment_id)
    }

    pub fn record(&self, segment_id: u64, scope: Scope) -> Option<&EmbeddingRecord> {
        self.by_segment
            .get(&segment_id)
            .map(|&base| &self.records[base + scope.index()])
    }

    /// Distinct labels, sorted.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .records
            .iter()
            .filter(|r| r.scope == Scope::Full)
            .map(|r| r.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Inserts the four records of one segment, all or nothing.
    pub fn index_segment(&mut self, entry: SegmentEntry, mode: TextMode) -> Result<(), StoreError> {
        if let Some(store) = self.mode {
            if store != mode {
                return Err(StoreError::ModeMismatch {
                    store,
                    insert: mode,
                });
            }
        }
        if self.by_segment.contains_key(&entry.segment_id) {
            return Err(StoreError::DuplicateSegment(entry.segment_id));
        }
        if let Some(v) = entry.vectors.iter().find(|v| v.dim() != self.dim) {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        self.mode = Some(mode);
        let base = self.records.len();
        let SegmentEntry {
            segment_id,
            label,
            user_id,
            texts,
            vectors,
        } = entry;
        for ((scope, text), vector) in Scope::ALL.into_iter().zip(texts).zip(vectors) {
            self.lanes[scope.index()].push(self.records.len());
            self.records.push(EmbeddingRecord {
                segment_id,
                scope,
                label: label.clone(),
                user_id: user_id.clone(),
                feature_text: text,
                vector: vector.values,
            });
        }
        self.by_segment.insert(segment_id, base);
        Ok(())
    }

    /// Indexes a template-mode segment from its feature bundle.
    pub fn index_bundle<T: Scalar>(
        &mut self,
        bundle: &FeatureBundle<T>,
        vectors: [EmbeddingVector; 4],
        label: &str,
        user_id: &str,
    ) -> Result<(), StoreError> {
        self.index_segment(
            SegmentEntry {
                segment_id: bundle.segment_id,
                label: label.to_string(),
                user_id: user_id.to_string(),
                texts: bundle.texts(),
                vectors,
            },
            TextMode::Template,
        )
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<(), StoreError> {
        if query.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        Ok(())
    }

    /// Exhaustive top-`p` cosine search among the records of one scope.
    pub fn ann_search(
        &self,
        query: &EmbeddingVector,
        scope: Scope,
        p: usize,
    ) -> Result<Vec<Hit>, StoreError> {
        self.check_query(query)?;
        if p == 0 {
            return Err(StoreError::InvalidParameter("p must be >= 1".into()));
        }
        let lane = &self.lanes[scope.index()];
        if lane.is_empty() {
            return Err(StoreError::EmptyIndex(scope));
        }
        let mut scored: Vec<(f64, u64)> = lane
            .iter()
            .map(|&i| {
                let r = &self.records[i];
                (dot(&query.values, &r.vector), r.segment_id)
            })
            .collect();
        let p = p.min(scored.len());
        if p < scored.len() {
            scored.select_nth_unstable_by(p - 1, |a, b| rank_order(*a, *b));
            scored.truncate(p);
        }
        scored.sort_unstable_by(|a, b| rank_order(*a, *b));
        Ok(scored
            .into_iter()
            .map(|(score, segment_id)| Hit { segment_id, score })
            .collect())
    }

    /// Per-scope search, fusion and metadata attachment: the full retrieval
    /// step for one query window. Scopes with zero weight are not searched.
    pub fn retrieve(
        &self,
        queries: &[EmbeddingVector; 4],
        params: &RetrievalParams,
    ) -> Result<Vec<RetrievalContext>, StoreError> {
        params.validate()?;
        let p = params.per_scope_hits();
        let mut lists = Vec::with_capacity(4);
        for scope in Scope::ALL {
            if params.weights.get(scope) > 0.0 {
                lists.push((scope, self.ann_search(&queries[scope.index()], scope, p)?));
            }
        }
        let mut table = score_table(&lists);
        if params.missing_scores == MissingScorePolicy::Rescore {
            for (segment_id, scores) in table.iter_mut() {
                for scope in Scope::ALL {
                    let k = scope.index();
                    if scores[k].is_none() && params.weights.get(scope) > 0.0 {
                        let r = self
                            .record(*segment_id, scope)
                            .ok_or(StoreError::UnknownSegment(*segment_id))?;
                        scores[k] = Some(dot(&queries[k].values, &r.vector));
                    }
                }
            }
        }
        let fused = fuse(table, &params.weights, params.q)?;
        self.attach(&fused)
    }

    /// Looks up metadata for fused candidates.
    pub fn attach(&self, fused: &[FusedCandidate]) -> Result<Vec<RetrievalContext>, StoreError> {
        fused
            .iter()
            .map(|c| {
                let base = *self
                    .by_segment
                    .get(&c.segment_id)
                    .ok_or(StoreError::UnknownSegment(c.segment_id))?;
                let full = &self.records[base];
                Ok(RetrievalContext {
                    segment_id: c.segment_id,
                    label: full.label.clone(),
                    user_id: full.user_id.clone(),
                    per_k_scores: c.per_k_scores,
                    fused_score: c.fused_score,
                    feature_texts: std::array::from_fn(|k| {
                        self.records[base + k].feature_text.clone()
                    }),
                })
            })
            .collect()
    }

    /// Records grouped per segment in insertion order.
    pub(crate) fn segments(&self) -> impl Iterator<Item = &[EmbeddingRecord]> {
        self.records.chunks(4)
    }

    /// Label histogram over indexed segments.
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for seg in self.segments() {
            *counts.entry(seg[0].label.clone()).or_insert(0) += 1;
        }
        counts
    }
}
