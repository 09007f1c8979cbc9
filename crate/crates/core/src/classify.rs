//! Prompt assembly, LLM classification, reply parsing and the retrieval-only
//! majority vote.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatClient, LlmError};
use crate::store::RetrievalContext;

pub const LABELED_HEADER: &str = "== LABELED SAMPLES ==";
pub const CANDIDATE_HEADER: &str = "== CANDIDATE ==";
/// Default retrieval-only similarity threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.75;

/// Instruction used before any prompt optimization.
pub const BASELINE_INSTRUCTION: &str = "You are a human activity recognition assistant. \
Each labeled sample and the candidate are described by per-channel statistics of a sensor \
window (mean, max, min, q1, q3, std, median, n_peaks) for the full window and for its start, \
mid and end thirds. Compare the candidate statistics with the labeled samples and decide \
which activity the candidate shows. Answer with a line `label: <one of the admissible labels>` \
followed by a line `rationale: <one sentence>`.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("no retrieved contexts")]
    EmptyContexts,
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("threshold {0} outside [-1, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub label_set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Exact,
    Fuzzy,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub rationale: String,
    pub raw_response: String,
    pub parse_status: ParseStatus,
}

fn check_label_set(label_set: &[String]) -> Result<(), ClassifyError> {
    if label_set.is_empty() {
        return Err(ClassifyError::InvalidLabelSet("empty".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for l in label_set {
        if l.trim().is_empty() || l.contains('\n') {
            return Err(ClassifyError::InvalidLabelSet(format!("bad label {l:?}")));
        }
        if !seen.insert(l) {
            return Err(ClassifyError::InvalidLabelSet(format!("duplicate label {l:?}")));
        }
    }
    Ok(())
}

/// The instruction followed by the enumerated admissible labels.
pub fn system_text(instruction: &str, label_set: &[String]) -> String {
    let mut out = instruction.trim_end().to_string();
    out.push_str("\n\nAdmissible labels:");
    for l in label_set {
        out.push_str("\n- ");
        out.push_str(l);
    }
    out
}

fn push_texts(out: &mut String, texts: &[String; 4]) {
    for t in texts {
        out.push_str(t.trim_end());
        out.push('\n');
    }
}

/// Renders contexts by descending fused score (ties by segment id), then the
/// candidate's four scope texts.
pub fn build_prompt(
    instruction: &str,
    contexts: &[RetrievalContext],
    candidate_texts: &[String; 4],
    label_set: &[String],
) -> Result<PromptBundle, ClassifyError> {
    if contexts.is_empty() {
        return Err(ClassifyError::EmptyContexts);
    }
    check_label_set(label_set)?;
    let mut ordered: Vec<&RetrievalContext> = contexts.iter().collect();
    ordered.sort_by(|a, b| {
        b.fused_score
            .total_cmp(&a.fused_score)
            .then(a.segment_id.cmp(&b.segment_id))
    });
    let mut user = String::new();
    user.push_str(LABELED_HEADER);
    user.push('\n');
    for (rank, c) in ordered.iter().enumerate() {
        user.push_str(&format!(
            "-- sample {} (score={:.4}) --\nLABEL: {}\n",
            rank + 1,
            c.fused_score,
            c.label
        ));
        push_texts(&mut user, &c.feature_texts);
    }
    user.push_str(CANDIDATE_HEADER);
    user.push('\n');
    push_texts(&mut user, candidate_texts);
    Ok(PromptBundle {
        system_text: system_text(instruction, label_set),
        user_text: user,
        label_set: label_set.to_vec(),
    })
}

pub fn llm_classify(client: &dyn ChatClient, prompt: &PromptBundle) -> Result<Prediction, ClassifyError> {
    let raw = client.chat(&prompt.system_text, &prompt.user_text)?;
    let (label, parse_status) = parse_prediction(&raw, &prompt.label_set);
    if parse_status == ParseStatus::Fallback {
        tracing::warn!(fallback = %label, "could not read a label from the reply");
    }
    Ok(Prediction {
        label,
        rationale: rationale(&raw),
        raw_response: raw,
        parse_status,
    })
}

fn strip_decoration(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| matches!(c, '*' | '`' | '"' | '\'' | '.' | ',' | ';'))
        .trim()
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn rationale(raw: &str) -> String {
    for line in raw.lines() {
        let t = line.trim();
        if let Some(rest) = strip_prefix_ci(t, "rationale:") {
            return rest.trim().to_string();
        }
    }
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.to_ascii_lowercase().starts_with("label:"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_word(haystack: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    haystack.match_indices(word).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + word.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}

/// Reads a label from a free-text reply. Never fails: unparseable replies
/// map to the lexicographically smallest label with status `Fallback`.
pub fn parse_prediction(raw: &str, label_set: &[String]) -> (String, ParseStatus) {
    for line in raw.lines() {
        let t = strip_decoration(line);
        let Some(rest) = strip_prefix_ci(t, "label:") else {
            continue;
        };
        let value = strip_decoration(rest);
        if let Some(l) = label_set.iter().find(|l| l.eq_ignore_ascii_case(value)) {
            return (l.clone(), ParseStatus::Exact);
        }
    }
    let lower = raw.to_lowercase();
    let mentioned: Vec<&String> = label_set
        .iter()
        .filter(|l| contains_word(&lower, &l.to_lowercase()))
        .collect();
    if let [only] = mentioned.as_slice() {
        return ((*only).clone(), ParseStatus::Fuzzy);
    }
    let fallback = label_set.iter().min().cloned().unwrap_or_default();
    (fallback, ParseStatus::Fallback)
}

/// Modal label; ties go to the larger summed score, then the smaller label.
pub fn modal_label<'a, I>(votes: I) -> Option<String>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (label, score) in votes {
        let e = tally.entry(label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += score;
    }
    // BTreeMap iterates labels ascending, so strict comparisons keep the
    // smaller label on a full tie.
    let mut best: Option<(&str, usize, f64)> = None;
    for (label, (count, sum)) in tally {
        let better = match best {
            None => true,
            Some((_, bc, bs)) => count > bc || (count == bc && sum > bs),
        };
        if better {
            best = Some((label, count, sum));
        }
    }
    best.map(|(l, _, _)| l.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalVote {
    pub label: String,
    /// No context reached the threshold; the vote fell back to all contexts.
    pub abstained: bool,
}

/// Majority vote over contexts whose fused score reaches `threshold`.
pub fn retrieve_only_classify(
    contexts: &[RetrievalContext],
    threshold: f64,
) -> Result<RetrievalVote, ClassifyError> {
    if contexts.is_empty() {
        return Err(ClassifyError::EmptyContexts);
    }
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(ClassifyError::InvalidThreshold(threshold));
    }
    let kept = contexts
        .iter()
        .filter(|c| c.fused_score >= threshold)
        .map(|c| (c.label.as_str(), c.fused_score));
    if let Some(label) = modal_label(kept) {
        return Ok(RetrievalVote {
            label,
            abstained: false,
        });
    }
    let label = modal_label(contexts.iter().map(|c| (c.label.as_str(), c.fused_score)))
        .expect("contexts non-empty");
    Ok(RetrievalVote {
        label,
        abstained: true,
    })
}

/// Reply of the offline classifier: the modal label among the prompt's
/// labeled samples.
pub fn mock_majority_reply(user_text: &str) -> String {
    let mut votes: Vec<(String, f64)> = Vec::new();
    let mut pending: Option<f64> = None;
    for line in user_text.lines() {
        if line == CANDIDATE_HEADER {
            break;
        }
        if let Some(rest) = line.strip_prefix("-- sample ") {
            pending = rest
                .split_once("(score=")
                .and_then(|(_, s)| s.split_once(')'))
                .and_then(|(s, _)| s.parse::<f64>().ok());
            continue;
        }
        if let (Some(score), Some(label)) = (pending, line.strip_prefix("LABEL: ")) {
            votes.push((label.to_string(), score));
            pending = None;
        }
    }
    match modal_label(votes.iter().map(|(l, s)| (l.as_str(), *s))) {
        Some(label) => format!(
            "label: {label}\nrationale: most frequent label among the {} retrieved samples.",
            votes.len()
        ),
        None => "no labeled samples given".to_string(),
    }
}
