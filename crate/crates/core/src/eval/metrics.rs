use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label `{0}` is not in the label set")]
    LabelOutOfSet(String),
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label set contains `{0}` twice")]
    DuplicateLabel(String),
}

/// `counts[i][j]` = number of samples with true label `labels[i]` predicted
/// as `labels[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion<S: AsRef<str>>(
    truth: &[S],
    predicted: &[S],
    label_set: &[String],
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut index = HashMap::with_capacity(label_set.len());
    for (i, l) in label_set.iter().enumerate() {
        if index.insert(l.as_str(), i).is_some() {
            return Err(MetricsError::DuplicateLabel(l.clone()));
        }
    }
    let lookup = |l: &str| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| MetricsError::LabelOutOfSet(l.to_string()))
    };
    let n = label_set.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (t, p) in truth.iter().zip(predicted) {
        counts[lookup(t.as_ref())?][lookup(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: label_set.to_vec(),
        counts,
    })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Header row of predicted labels, then one row per true label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(&csv_field(l));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
}

impl F1Scores {
    /// Unweighted mean of per-class F1 over the named labels only.
    pub fn macro_over(&self, labels: &[String]) -> f64 {
        let picked: Vec<f64> = self
            .per_class
            .iter()
            .filter(|c| labels.contains(&c.label))
            .map(|c| c.f1)
            .collect();
        if picked.is_empty() {
            0.0
        } else {
            picked.iter().sum::<f64>() / picked.len() as f64
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 (every 0/0 taken as 0), their
/// unweighted mean and their support-weighted mean.
pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let rows = cm.row_sums();
    let cols = cm.column_sums();
    let per_class: Vec<ClassScore> = cm
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let tp = cm.counts[i][i];
            let precision = ratio(tp, cols[i]);
            let recall = ratio(tp, rows[i]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScore {
                label: label.clone(),
                precision,
                recall,
                f1,
                support: rows[i],
            }
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    let total: u64 = rows.iter().sum();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class
            .iter()
            .map(|c| c.f1 * c.support as f64)
            .sum::<f64>()
            / total as f64
    };
    F1Scores {
        macro_f1,
        weighted_f1,
        per_class,
    }
}

/// Fraction of positions where prediction equals truth.
pub fn accuracy<S: AsRef<str>>(truth: &[S], predicted: &[S]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth
        .iter()
        .zip(predicted)
        .filter(|(t, p)| t.as_ref() == p.as_ref())
        .count();
    hits as f64 / truth.len() as f64
}

/// Macro-F1 of `predicted` against `truth` over `label_set`.
pub fn macro_f1<S: AsRef<str>>(
    truth: &[S],
    predicted: &[S],
    label_set: &[String],
) -> Result<f64, MetricsError> {
    Ok(f1_scores(&confusion(truth, predicted, label_set)?).macro_f1)
}
