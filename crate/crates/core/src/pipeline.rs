//! Index construction and per-window inference: normalize, partition,
//! featurize (or describe), embed, retrieve, prompt, classify.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{build_prompt, llm_classify, retrieve_only_classify, Prediction, RetrievalVote};
use crate::describe::{describe_window, SensorConfig, DEFAULT_SAMPLE_BUDGET};
use crate::embed::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::eval::metrics::macro_f1;
use crate::features::build_bundle;
use crate::ingest::{fit_normalization, partition_window, NormalizationStats, SensorWindow};
use crate::llm::ChatClient;
use crate::optimize::{Exemplar, Fitness, OptimizeError};
use crate::scalar::Scalar;
use crate::store::{RetrievalContext, RetrievalParams, SegmentEntry, TextMode, VectorStore};

/// Windows per embedding request while indexing.
const INDEX_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorSettings {
    pub sensor: SensorConfig,
    #[serde(default = "default_budget")]
    pub sample_budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_SAMPLE_BUDGET
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub channel_names: Vec<String>,
    pub retrieval: RetrievalParams,
    /// Z-score with statistics of the indexing windows.
    pub normalize: bool,
    /// `Some` embeds LLM descriptors instead of statistic templates, for both
    /// indexed and query windows.
    pub descriptor: Option<DescriptorSettings>,
}

impl PipelineSettings {
    pub fn new(channel_names: Vec<String>) -> Self {
        Self {
            channel_names,
            retrieval: RetrievalParams::default(),
            normalize: true,
            descriptor: None,
        }
    }

    pub fn text_mode(&self) -> TextMode {
        if self.descriptor.is_some() {
            TextMode::Descriptor
        } else {
            TextMode::Template
        }
    }
}

#[derive(Clone)]
pub struct Components {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub chat: Arc<dyn ChatClient>,
}

/// A query window after retrieval, ready to be classified under any
/// instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub segment_id: u64,
    pub truth: Option<String>,
    pub candidate_texts: [String; 4],
    pub contexts: Vec<RetrievalContext>,
}

pub struct Pipeline<T: Scalar = f64> {
    components: Components,
    settings: PipelineSettings,
    store: VectorStore,
    normalization: Option<NormalizationStats<T>>,
    label_set: Vec<String>,
}

impl<T: Scalar> Pipeline<T> {
    /// Builds the store from labeled indexing windows.
    pub fn index(
        windows: &[SensorWindow<T>],
        settings: PipelineSettings,
        components: Components,
    ) -> Result<Self> {
        settings.retrieval.validate()?;
        if windows.is_empty() {
            return Err(Error::ConfigInvalid("no indexing windows".into()));
        }
        if let Some(w) = windows.iter().find(|w| w.label.is_none()) {
            return Err(Error::ConfigInvalid(format!(
                "indexing window {} has no label",
                w.segment_id
            )));
        }
        let normalization = if settings.normalize {
            Some(fit_normalization(windows.iter().map(|w| w.samples.as_slice()))?)
        } else {
            None
        };
        let mut pipeline = Self {
            store: VectorStore::new(components.embedder.dim()),
            components,
            settings,
            normalization,
            label_set: Vec::new(),
        };
        let mode = pipeline.settings.text_mode();
        let entries: Vec<Result<Vec<SegmentEntry>>> = windows
            .par_chunks(INDEX_CHUNK)
            .map(|chunk| pipeline.entries_for(chunk))
            .collect();
        for chunk in entries {
            for entry in chunk? {
                pipeline.store.index_segment(entry, mode)?;
            }
        }
        pipeline.label_set = pipeline.store.labels();
        pipeline.warn_small_store();
        Ok(pipeline)
    }

    /// Wraps a previously built store.
    pub fn from_store(
        store: VectorStore,
        normalization: Option<NormalizationStats<T>>,
        settings: PipelineSettings,
        components: Components,
    ) -> Result<Self> {
        settings.retrieval.validate()?;
        if store.dim() != components.embedder.dim() {
            return Err(crate::store::StoreError::DimensionMismatch {
                expected: store.dim(),
                actual: components.embedder.dim(),
            }
            .into());
        }
        if let Some(mode) = store.mode() {
            if mode != settings.text_mode() {
                return Err(crate::store::StoreError::ModeMismatch {
                    store: mode,
                    insert: settings.text_mode(),
                }
                .into());
            }
        }
        if settings.normalize && normalization.is_none() {
            return Err(Error::ConfigInvalid(
                "normalization enabled but no statistics supplied".into(),
            ));
        }
        let pipeline = Self {
            label_set: store.labels(),
            components,
            settings,
            store,
            normalization,
        };
        pipeline.warn_small_store();
        Ok(pipeline)
    }

    fn warn_small_store(&self) {
        let n = self.store.segment_count();
        if self.settings.retrieval.q > n {
            tracing::warn!(
                q = self.settings.retrieval.q,
                segments = n,
                "q exceeds indexed segments, every segment is a context"
            );
        }
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    pub fn into_store(self) -> VectorStore {
        self.store
    }

    pub fn normalization(&self) -> Option<&NormalizationStats<T>> {
        self.normalization.as_ref()
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    /// Labels present in the store, sorted.
    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    fn entries_for(&self, chunk: &[SensorWindow<T>]) -> Result<Vec<SegmentEntry>> {
        let mut texts = Vec::with_capacity(4 * chunk.len());
        for w in chunk {
            texts.extend(self.window_texts(w)?);
        }
        let vectors = self.components.embedder.embed_batch(&texts)?;
        let mut vectors = vectors.into_iter();
        let mut texts = texts.into_iter();
        Ok(chunk
            .iter()
            .map(|w| SegmentEntry {
                segment_id: w.segment_id,
                label: w.label.clone().unwrap_or_default(),
                user_id: w.subject_id.clone(),
                texts: std::array::from_fn(|_| texts.next().expect("4 texts per window")),
                vectors: std::array::from_fn(|_| vectors.next().expect("4 vectors per window")),
            })
            .collect())
    }

    /// The four texts a window is embedded from: statistic templates, or
    /// descriptor sections in descriptor mode.
    pub fn window_texts(&self, window: &SensorWindow<T>) -> Result<[String; 4]> {
        let normalized;
        let w = match &self.normalization {
            Some(stats) => {
                normalized = window.normalized(stats)?;
                &normalized
            }
            None => window,
        };
        match &self.settings.descriptor {
            None => {
                let pw = partition_window(w)?;
                Ok(build_bundle(&pw, &self.settings.channel_names)?.texts())
            }
            Some(d) => Ok(describe_window(
                self.components.chat.as_ref(),
                w,
                &d.sensor,
                d.sample_budget,
            )?
            .texts()),
        }
    }

    /// Texts, embeddings and ranked contexts for one query window.
    pub fn prepare_one(&self, window: &SensorWindow<T>) -> Result<PreparedQuery> {
        let texts = self.window_texts(window)?;
        let vectors: Vec<EmbeddingVector> = self.components.embedder.embed_batch(&texts)?;
        let queries: [EmbeddingVector; 4] = vectors
            .try_into()
            .map_err(|_| Error::ConfigInvalid("embedder returned wrong vector count".into()))?;
        let contexts = self.store.retrieve(&queries, &self.settings.retrieval)?;
        Ok(PreparedQuery {
            segment_id: window.segment_id,
            truth: window.label.clone(),
            candidate_texts: texts,
            contexts,
        })
    }

    /// [`Self::prepare_one`] over many windows in parallel; order preserved.
    pub fn prepare(&self, windows: &[SensorWindow<T>]) -> Vec<Result<PreparedQuery>> {
        windows.par_iter().map(|w| self.prepare_one(w)).collect()
    }

    pub fn classify_prepared(
        &self,
        query: &PreparedQuery,
        instruction: &str,
        label_set: &[String],
    ) -> Result<Prediction> {
        let prompt = build_prompt(instruction, &query.contexts, &query.candidate_texts, label_set)?;
        Ok(llm_classify(self.components.chat.as_ref(), &prompt)?)
    }

    pub fn classify_window(&self, window: &SensorWindow<T>, instruction: &str) -> Result<Prediction> {
        let q = self.prepare_one(window)?;
        self.classify_prepared(&q, instruction, &self.label_set)
    }

    pub fn retrieval_vote(&self, query: &PreparedQuery, threshold: f64) -> Result<RetrievalVote> {
        Ok(retrieve_only_classify(&query.contexts, threshold)?)
    }

    /// Classification prompts of the first `n` queries, for the optimizer.
    pub fn exemplars(&self, queries: &[PreparedQuery], n: usize) -> Vec<Exemplar> {
        queries
            .iter()
            .filter(|q| q.truth.is_some())
            .take(n)
            .filter_map(|q| {
                let p = build_prompt("", &q.contexts, &q.candidate_texts, &self.label_set).ok()?;
                Some(Exemplar {
                    true_label: q.truth.clone()?,
                    prompt_text: p.user_text,
                })
            })
            .collect()
    }
}

/// Sorted union of the store's labels and any extra labels.
pub fn label_union<'a>(base: &[String], extra: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut set: BTreeSet<String> = base.iter().cloned().collect();
    set.extend(extra.into_iter().map(str::to_string));
    set.into_iter().collect()
}

/// Validation macro-F1 of an instruction: the optimizer's fitness.
pub struct PipelineFitness<'a, T: Scalar> {
    pipeline: &'a Pipeline<T>,
    queries: Vec<PreparedQuery>,
    label_set: Vec<String>,
}

impl<'a, T: Scalar> PipelineFitness<'a, T> {
    /// Prepares the labeled validation windows once; a `fraction` below 1
    /// keeps a seeded subset.
    pub fn new(
        pipeline: &'a Pipeline<T>,
        validation: &[SensorWindow<T>],
        fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut windows: Vec<&SensorWindow<T>> =
            validation.iter().filter(|w| w.label.is_some()).collect();
        if windows.is_empty() {
            return Err(Error::ConfigInvalid("validation set has no labeled windows".into()));
        }
        if fraction < 1.0 {
            let keep = ((windows.len() as f64 * fraction).ceil() as usize).max(1);
            windows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            windows.truncate(keep);
            windows.sort_by_key(|w| w.segment_id);
        }
        let queries = windows
            .par_iter()
            .map(|w| pipeline.prepare_one(w))
            .collect::<Result<Vec<_>>>()?;
        let label_set = label_union(
            pipeline.label_set(),
            queries.iter().filter_map(|q| q.truth.as_deref()),
        );
        Ok(Self {
            pipeline,
            queries,
            label_set,
        })
    }

    pub fn queries(&self) -> &[PreparedQuery] {
        &self.queries
    }
}

impl<T: Scalar> Fitness for PipelineFitness<'_, T> {
    fn fitness(&self, instruction: &str) -> std::result::Result<f64, OptimizeError> {
        let predicted = self
            .queries
            .par_iter()
            .map(|q| {
                self.pipeline
                    .classify_prepared(q, instruction, &self.label_set)
                    .map(|p| p.label)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| OptimizeError::Fitness(e.to_string()))?;
        let truth: Vec<&str> = self
            .queries
            .iter()
            .map(|q| q.truth.as_deref().unwrap_or_default())
            .collect();
        let predicted: Vec<&str> = predicted.iter().map(String::as_str).collect();
        macro_f1(&truth, &predicted, &self.label_set).map_err(|e| OptimizeError::Fitness(e.to_string()))
    }
}
