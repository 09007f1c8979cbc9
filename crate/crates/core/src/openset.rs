//! Open-set protocols: withheld-class splits, label-space modes, naming of
//! unseen activities and their mapping back onto known class names.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingProvider};
use crate::eval::metrics::MetricsError;
use crate::eval::report::EvalReport;
use crate::ingest::SensorWindow;
use crate::llm::{ChatClient, LlmError};
use crate::scalar::Scalar;
use crate::pipeline::{Components, Pipeline, PipelineSettings, PreparedQuery};
use crate::store::RetrievalContext;
use crate::classify::Prediction;
use rayon::prelude::*;

pub const PLACEHOLDER: &str = "unseen_activity";
pub const UNSEEN_HEADER: &str = "== UNSEEN ACTIVITY ==";
const LABEL_ATTEMPTS: usize = 2;
const MAX_LABEL_WORDS: usize = 4;

const NAMING_SYSTEM: &str = "You name human activities from wearable sensor statistics.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpenSetError {
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("openness {0} outside (0, 1)")]
    InvalidOpenness(f64),
    #[error("test fraction {0} outside [0, 1)")]
    InvalidFraction(f64),
    #[error("no usable label after {0} attempts")]
    EmptyLabel(usize),
    #[error("no class names to map onto")]
    NoClasses,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetSplit {
    pub known_classes: Vec<String>,
    pub withheld_classes: Vec<String>,
    /// `None` for leave-one-class-out splits.
    pub openness: Option<f64>,
    pub indexing_ids: Vec<u64>,
    pub validation_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
}

impl OpenSetSplit {
    pub fn is_withheld(&self, label: &str) -> bool {
        self.withheld_classes.iter().any(|c| c == label)
    }

    /// Selects the windows whose ids are in `ids`, preserving input order.
    pub fn select<T: Scalar>(windows: &[SensorWindow<T>], ids: &[u64]) -> Vec<SensorWindow<T>> {
        let wanted: BTreeSet<u64> = ids.iter().copied().collect();
        windows
            .iter()
            .filter(|w| wanted.contains(&w.segment_id))
            .cloned()
            .collect()
    }
}

fn classes_of<T: Scalar>(windows: &[SensorWindow<T>]) -> Vec<String> {
    let set: BTreeSet<&str> = windows.iter().filter_map(|w| w.label.as_deref()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// `round-half-up(openness * n)`, at least 1 and at most `n - 1`.
pub fn withheld_count(n_classes: usize, openness: f64) -> usize {
    // the small bias absorbs binary representation error in products like 0.35 * 10
    let k = (openness * n_classes as f64 + 0.5 + 1e-9).floor() as usize;
    k.clamp(1, n_classes.saturating_sub(1).max(1))
}

/// Withholds a seeded random subset of classes. Known-class windows go to
/// the test side with probability `test_fraction` (stratified per class);
/// every withheld-class window is a test window.
pub fn make_openset_split<T: Scalar>(
    windows: &[SensorWindow<T>],
    openness: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<OpenSetSplit, OpenSetError> {
    if !(openness > 0.0 && openness < 1.0) {
        return Err(OpenSetError::InvalidOpenness(openness));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(OpenSetError::InvalidFraction(test_fraction));
    }
    let classes = classes_of(windows);
    if classes.len() < 2 {
        return Err(OpenSetError::TooFewClasses(classes.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = withheld_count(classes.len(), openness);
    let mut withheld: Vec<String> = classes.choose_multiple(&mut rng, k).cloned().collect();
    withheld.sort();
    let known: Vec<String> = classes
        .iter()
        .filter(|c| !withheld.contains(c))
        .cloned()
        .collect();
    let mut indexing_ids = Vec::new();
    let mut test_ids = Vec::new();
    for class in &classes {
        let mut ids: Vec<u64> = windows
            .iter()
            .filter(|w| w.label.as_deref() == Some(class))
            .map(|w| w.segment_id)
            .collect();
        if withheld.contains(class) {
            test_ids.extend(ids);
            continue;
        }
        ids.shuffle(&mut rng);
        let n_test = (ids.len() as f64 * test_fraction).round() as usize;
        test_ids.extend_from_slice(&ids[..n_test]);
        indexing_ids.extend_from_slice(&ids[n_test..]);
    }
    indexing_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(OpenSetSplit {
        known_classes: known,
        withheld_classes: withheld,
        openness: Some(openness),
        indexing_ids,
        validation_ids: Vec::new(),
        test_ids,
    })
}

/// Indexes every other class; tests on all windows of `class`.
pub fn leave_one_class_out<T: Scalar>(
    windows: &[SensorWindow<T>],
    class: &str,
) -> Result<OpenSetSplit, OpenSetError> {
    let classes = classes_of(windows);
    if !classes.iter().any(|c| c == class) {
        return Err(OpenSetError::UnknownClass(class.to_string()));
    }
    let (test, index): (Vec<&SensorWindow<T>>, Vec<&SensorWindow<T>>) = windows
        .iter()
        .filter(|w| w.label.is_some())
        .partition(|w| w.label.as_deref() == Some(class));
    Ok(OpenSetSplit {
        known_classes: classes.iter().filter(|c| *c != class).cloned().collect(),
        withheld_classes: vec![class.to_string()],
        openness: None,
        indexing_ids: index.iter().map(|w| w.segment_id).collect(),
        validation_ids: Vec::new(),
        test_ids: test.iter().map(|w| w.segment_id).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpaceMode {
    /// Withheld true labels are admissible answers.
    TrueLabelAvailable,
    /// Withheld labels are replaced by [`PLACEHOLDER`].
    TrueLabelHidden,
}

/// Admissible labels shown to the classifier, sorted.
pub fn label_space(mode: LabelSpaceMode, split: &OpenSetSplit) -> Vec<String> {
    let mut set: BTreeSet<String> = split.known_classes.iter().cloned().collect();
    match mode {
        LabelSpaceMode::TrueLabelAvailable => set.extend(split.withheld_classes.iter().cloned()),
        LabelSpaceMode::TrueLabelHidden => {
            set.insert(PLACEHOLDER.to_string());
        }
    }
    set.into_iter().collect()
}

/// Ground truth as scored under `mode`.
pub fn scored_truth(mode: LabelSpaceMode, split: &OpenSetSplit, label: &str) -> String {
    if mode == LabelSpaceMode::TrueLabelHidden && split.is_withheld(label) {
        PLACEHOLDER.to_string()
    } else {
        label.to_string()
    }
}

/// First non-empty line, text after its last colon, punctuation dropped,
/// lowercased, at most four words. `None` if nothing remains.
pub fn normalize_label(reply: &str) -> Option<String> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty())?;
    let tail = line.rsplit(':').next().unwrap_or(line);
    let cleaned: String = tail
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                ' '
            }
        })
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().take(MAX_LABEL_WORDS).collect();
    if words.is_empty() {
        return None;
    }
    Some(words.join(" ").to_lowercase())
}

/// Prompt asking for a short name of the candidate's activity.
pub fn build_naming_prompt(contexts: &[RetrievalContext], candidate_texts: &[String; 4]) -> String {
    let mut out = format!(
        "{UNSEEN_HEADER}\nThe candidate below does not match any of the known activities \
in the labeled samples. Name the activity it most likely shows in at most \
{MAX_LABEL_WORDS} words. Reply with a single line `label: <name>`.\n"
    );
    out.push_str(crate::classify::LABELED_HEADER);
    out.push('\n');
    for (rank, c) in contexts.iter().enumerate() {
        out.push_str(&format!(
            "-- sample {} (score={:.4}) --\nLABEL: {}\n",
            rank + 1,
            c.fused_score,
            c.label
        ));
        for t in &c.feature_texts {
            out.push_str(t.trim_end());
            out.push('\n');
        }
    }
    out.push_str(crate::classify::CANDIDATE_HEADER);
    out.push('\n');
    for t in candidate_texts {
        out.push_str(t.trim_end());
        out.push('\n');
    }
    out
}

pub fn generate_unseen_label(
    client: &dyn ChatClient,
    contexts: &[RetrievalContext],
    candidate_texts: &[String; 4],
) -> Result<String, OpenSetError> {
    let prompt = build_naming_prompt(contexts, candidate_texts);
    for attempt in 0..LABEL_ATTEMPTS {
        let reply = client.chat(NAMING_SYSTEM, &prompt)?;
        if let Some(label) = normalize_label(&reply) {
            return Ok(label);
        }
        tracing::warn!(attempt, "empty unseen-activity label");
    }
    Err(OpenSetError::EmptyLabel(LABEL_ATTEMPTS))
}

/// Closest class name by embedding cosine; ties go to the smaller name. A
/// class whose normalized name equals the label matches with similarity 1
/// without embedding.
pub fn map_label_semantic(
    generated: &str,
    class_names: &[String],
    embedder: &dyn EmbeddingProvider,
) -> Result<(String, f64), OpenSetError> {
    let mut classes: Vec<&String> = class_names.iter().collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return Err(OpenSetError::NoClasses);
    }
    let target = normalize_label(generated).unwrap_or_default();
    if let Some(c) = classes
        .iter()
        .find(|c| normalize_label(c).as_deref() == Some(target.as_str()))
    {
        return Ok(((*c).clone(), 1.0));
    }
    let mut texts = vec![generated.to_string()];
    texts.extend(classes.iter().map(|c| (*c).clone()));
    let sims: Vec<f64> = match embedder.embed_batch(&texts) {
        Ok(vectors) => vectors[1..].iter().map(|v| vectors[0].cosine(v)).collect(),
        // the local embedder only reads numbers; names fall back to trigrams
        Err(EmbedError::NoNumericContent) => classes
            .iter()
            .map(|c| trigram_cosine(&target, &normalize_label(c).unwrap_or_default()))
            .collect(),
        Err(e) => return Err(e.into()),
    };
    let mut best: Option<(&String, f64)> = None;
    for (c, s) in classes.iter().zip(sims) {
        let s = s.clamp(-1.0, 1.0);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    let (c, s) = best.expect("classes non-empty");
    Ok((c.clone(), s))
}

fn trigrams(s: &str) -> BTreeMap<[char; 3], f64> {
    let padded: Vec<char> = format!("  {s} ").chars().collect();
    let mut out = BTreeMap::new();
    for w in padded.windows(3) {
        *out.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
    }
    out
}

/// Cosine between character-trigram count vectors.
pub fn trigram_cosine(a: &str, b: &str) -> f64 {
    let (ta, tb) = (trigrams(a), trigrams(b));
    let dot: f64 = ta.iter().filter_map(|(k, x)| tb.get(k).map(|y| x * y)).sum();
    let na = ta.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = tb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One classified open-set test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetRecord {
    pub segment_id: u64,
    pub true_label: String,
    pub predicted: String,
    pub withheld: bool,
    pub generated_label: Option<String>,
    pub mapped_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithheldSection {
    pub classes: Vec<String>,
    /// Share of each withheld class's windows whose generated label mapped
    /// back to the class.
    pub per_class_labeling_accuracy: BTreeMap<String, f64>,
    pub labeling_accuracy: Option<f64>,
    pub generated_label_histogram: BTreeMap<String, u64>,
    pub unmapped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetReport {
    pub mode: LabelSpaceMode,
    pub openness: Option<f64>,
    pub known_classes: Vec<String>,
    /// Macro-F1 as reported: over the scored label set, or over known classes
    /// only when the placeholder is excluded.
    pub macro_f1: f64,
    pub placeholder_in_macro: bool,
    pub eval: EvalReport,
    pub withheld: WithheldSection,
}

pub fn openset_report(
    records: &[OpenSetRecord],
    split: &OpenSetSplit,
    mode: LabelSpaceMode,
    include_placeholder: bool,
) -> Result<OpenSetReport, OpenSetError> {
    let truth: Vec<String> = records
        .iter()
        .map(|r| scored_truth(mode, split, &r.true_label))
        .collect();
    let predicted: Vec<String> = records.iter().map(|r| r.predicted.clone()).collect();
    let labels = crate::pipeline::label_union(
        &label_space(mode, split),
        truth.iter().chain(&predicted).map(String::as_str),
    );
    let eval = EvalReport::from_predictions(&truth, &predicted, &labels)?;
    let macro_f1 = if mode == LabelSpaceMode::TrueLabelHidden && !include_placeholder {
        eval.f1_over(&split.known_classes)
    } else {
        eval.macro_f1
    };

    let mut hits: BTreeMap<String, (u64, u64)> = split
        .withheld_classes
        .iter()
        .map(|c| (c.clone(), (0, 0)))
        .collect();
    let mut histogram = BTreeMap::new();
    let mut unmapped = 0;
    let mut any_generated = false;
    for r in records.iter().filter(|r| r.withheld) {
        let Some(g) = &r.generated_label else { continue };
        any_generated = true;
        *histogram.entry(g.clone()).or_insert(0) += 1;
        let e = hits.entry(r.true_label.clone()).or_insert((0, 0));
        e.1 += 1;
        match &r.mapped_class {
            Some(m) if *m == r.true_label => e.0 += 1,
            Some(_) => {}
            None => unmapped += 1,
        }
    }
    let (total_hits, total) = hits.values().fold((0, 0), |a, h| (a.0 + h.0, a.1 + h.1));
    Ok(OpenSetReport {
        mode,
        openness: split.openness,
        known_classes: split.known_classes.clone(),
        macro_f1,
        placeholder_in_macro: include_placeholder || mode == LabelSpaceMode::TrueLabelAvailable,
        eval,
        withheld: WithheldSection {
            classes: split.withheld_classes.clone(),
            per_class_labeling_accuracy: hits
                .into_iter()
                .filter(|(_, (_, n))| *n > 0)
                .map(|(c, (h, n))| (c, h as f64 / n as f64))
                .collect(),
            labeling_accuracy: (any_generated && total > 0)
                .then(|| total_hits as f64 / total as f64),
            generated_label_histogram: histogram,
            unmapped,
        },
    })
}

/// Options of one open-set run.
#[derive(Debug, Clone, Copy)]
pub struct OpenSetOptions<'a> {
    pub mode: LabelSpaceMode,
    pub include_placeholder: bool,
    /// Name every withheld-class window and map the name onto all classes.
    pub label_unseen: bool,
    pub instruction: &'a str,
}

/// Classifies a prepared window against the label space of `mode`.
pub fn openset_classify<T: Scalar>(
    pipeline: &Pipeline<T>,
    split: &OpenSetSplit,
    mode: LabelSpaceMode,
    query: &PreparedQuery,
    instruction: &str,
) -> crate::Result<Prediction> {
    pipeline.classify_prepared(query, instruction, &label_space(mode, split))
}

/// Indexes the split's indexing windows, classifies its test windows and
/// scores them. Withheld classes never reach the store.
pub fn run_openset<T: Scalar>(
    windows: &[SensorWindow<T>],
    split: &OpenSetSplit,
    settings: PipelineSettings,
    components: Components,
    opts: &OpenSetOptions<'_>,
) -> crate::Result<(OpenSetReport, Vec<OpenSetRecord>)> {
    let indexing = OpenSetSplit::select(windows, &split.indexing_ids);
    if indexing.iter().any(|w| w.label.as_deref().is_some_and(|l| split.is_withheld(l))) {
        return Err(crate::Error::ConfigInvalid(
            "withheld class in the indexing set".into(),
        ));
    }
    let test = OpenSetSplit::select(windows, &split.test_ids);
    if test.is_empty() {
        return Err(crate::Error::ConfigInvalid("open-set split has no test windows".into()));
    }
    let pipeline = Pipeline::index(&indexing, settings, components)?;
    let mut all_classes: Vec<String> = split
        .known_classes
        .iter()
        .chain(&split.withheld_classes)
        .cloned()
        .collect();
    all_classes.sort();
    let records = test
        .par_iter()
        .filter(|w| w.label.is_some())
        .map(|w| -> crate::Result<OpenSetRecord> {
            let truth = w.label.clone().expect("filtered");
            let q = pipeline.prepare_one(w)?;
            let pred = openset_classify(&pipeline, split, opts.mode, &q, opts.instruction)?;
            let withheld = split.is_withheld(&truth);
            let (generated_label, mapped_class) = if withheld && opts.label_unseen {
                let chat = pipeline.components().chat.as_ref();
                let g = generate_unseen_label(chat, &q.contexts, &q.candidate_texts)?;
                let embedder = pipeline.components().embedder.as_ref();
                let (c, _) = map_label_semantic(&g, &all_classes, embedder)?;
                (Some(g), Some(c))
            } else {
                (None, None)
            };
            Ok(OpenSetRecord {
                segment_id: w.segment_id,
                true_label: truth,
                predicted: pred.label,
                withheld,
                generated_label,
                mapped_class,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let report = openset_report(&records, split, opts.mode, opts.include_placeholder)?;
    Ok((report, records))
}
