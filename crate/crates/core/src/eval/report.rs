use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cost::CostSummary;
use super::metrics::{confusion, f1_scores, ClassScore, ConfusionMatrix, MetricsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Windows that could not be classified; not part of the metrics.
    pub n_failed: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub confusion: ConfusionMatrix,
    /// Prediction parse outcomes (`exact`, `fuzzy`, `fallback`).
    #[serde(default)]
    pub parse_status: BTreeMap<String, u64>,
    pub runtime_ms: u64,
    pub cost: Option<CostSummary>,
}

impl EvalReport {
    pub fn from_predictions<S: AsRef<str>>(
        truth: &[S],
        predicted: &[S],
        label_set: &[String],
    ) -> Result<Self, MetricsError> {
        let cm = confusion(truth, predicted, label_set)?;
        let f1 = f1_scores(&cm);
        Ok(Self {
            n_samples: truth.len(),
            n_failed: 0,
            accuracy: cm.accuracy(),
            macro_f1: f1.macro_f1,
            weighted_f1: f1.weighted_f1,
            per_class: f1.per_class,
            confusion: cm,
            parse_status: BTreeMap::new(),
            runtime_ms: 0,
            cost: None,
        })
    }

    /// Macro-F1 restricted to the named labels.
    pub fn f1_over(&self, labels: &[String]) -> f64 {
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

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn confusion_csv(&self) -> String {
        self.confusion.to_csv()
    }

    pub fn to_text(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!(
            "samples   {}\nfailed    {}\naccuracy  {:.4}\nmacro F1  {:.4}\nweighted F1 {:.4}\n\n",
            self.n_samples, self.n_failed, self.accuracy, self.macro_f1, self.weighted_f1
        );
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>6}  {:>6}  {:>7}\n",
            "class", "precision", "recall", "f1", "support"
        ));
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<width$}  {:>9.4}  {:>6.4}  {:>6.4}  {:>7}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        if !self.parse_status.is_empty() {
            out.push_str("\nparse status:");
            for (k, v) in &self.parse_status {
                out.push_str(&format!(" {k}={v}"));
            }
            out.push('\n');
        }
        if let Some(cost) = &self.cost {
            out.push('\n');
            out.push_str(&cost.to_text());
        }
        out
    }
}
