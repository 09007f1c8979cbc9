use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::{cost_report, CostLedger, CostRates, RequestLog};
use super::report::EvalReport;
use crate::classify::{ParseStatus, BASELINE_INSTRUCTION};
use crate::error::{Error, Result};
use crate::ingest::SensorWindow;
use crate::pipeline::{label_union, Components, Pipeline, PipelineSettings};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub instruction: String,
    /// Also score the retrieval-only majority vote at this threshold.
    pub threshold: Option<f64>,
    pub rates: CostRates,
    /// Request log shared with the components, replayed into the cost ledger.
    pub request_log: Option<RequestLog>,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            instruction: BASELINE_INSTRUCTION.to_string(),
            threshold: None,
            rates: CostRates::default(),
            request_log: None,
        }
    }
}

/// Outcome for one test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub segment_id: u64,
    pub truth: Option<String>,
    pub label: Option<String>,
    pub parse_status: Option<ParseStatus>,
    /// Fused scores of the retrieved contexts, best first.
    pub fused_scores: Vec<f64>,
    pub retrieval_vote: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub report: EvalReport,
    pub retrieval_only: Option<EvalReport>,
    pub predictions: Vec<WindowPrediction>,
}

/// Indexes `indexing`, classifies every window of `test` and scores the
/// predictions. A window that fails is recorded and counted, not fatal.
pub fn run_benchmark<T: Scalar>(
    settings: PipelineSettings,
    components: Components,
    indexing: &[SensorWindow<T>],
    test: &[SensorWindow<T>],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkOutcome> {
    if indexing.is_empty() {
        return Err(Error::ConfigInvalid("indexing set is empty".into()));
    }
    check_test(test)?;
    let start = Instant::now();
    let pipeline = Pipeline::index(indexing, settings, components)?;
    let mut out = evaluate_pipeline(&pipeline, test, opts)?;
    out.report.runtime_ms = start.elapsed().as_millis() as u64;
    Ok(out)
}

fn check_test<T: Scalar>(test: &[SensorWindow<T>]) -> Result<()> {
    if test.is_empty() {
        return Err(Error::ConfigInvalid("test set is empty".into()));
    }
    if let Some(w) = test.iter().find(|w| w.label.is_none()) {
        return Err(Error::ConfigInvalid(format!(
            "test window {} has no label",
            w.segment_id
        )));
    }
    Ok(())
}

/// Per-window predictions without scoring; used by the benchmark and by
/// unlabeled classification runs.
pub fn predict_windows<T: Scalar>(
    pipeline: &Pipeline<T>,
    windows: &[SensorWindow<T>],
    instruction: &str,
    threshold: Option<f64>,
) -> Vec<WindowPrediction> {
    let label_set = label_union(
        pipeline.label_set(),
        windows.iter().filter_map(|w| w.label.as_deref()),
    );
    windows
        .par_iter()
        .map(|w| {
            let mut p = WindowPrediction {
                segment_id: w.segment_id,
                truth: w.label.clone(),
                label: None,
                parse_status: None,
                fused_scores: Vec::new(),
                retrieval_vote: None,
                error: None,
            };
            let mut run = || -> Result<()> {
                let q = pipeline.prepare_one(w)?;
                p.fused_scores = q.contexts.iter().map(|c| c.fused_score).collect();
                if let Some(t) = threshold {
                    p.retrieval_vote = Some(pipeline.retrieval_vote(&q, t)?.label);
                }
                let pred = pipeline.classify_prepared(&q, instruction, &label_set)?;
                p.label = Some(pred.label);
                p.parse_status = Some(pred.parse_status);
                Ok(())
            };
            if let Err(e) = run() {
                tracing::warn!(segment_id = w.segment_id, error = %e, "window failed");
                p.error = Some(e.to_string());
            }
            p
        })
        .collect()
}

/// Scores an already-built pipeline on labeled test windows.
pub fn evaluate_pipeline<T: Scalar>(
    pipeline: &Pipeline<T>,
    test: &[SensorWindow<T>],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkOutcome> {
    check_test(test)?;
    let start = Instant::now();
    let predictions = predict_windows(pipeline, test, &opts.instruction, opts.threshold);
    let label_set = label_union(
        pipeline.label_set(),
        test.iter().filter_map(|w| w.label.as_deref()),
    );
    let ok: Vec<&WindowPrediction> = predictions.iter().filter(|p| p.label.is_some()).collect();
    let n_failed = predictions.len() - ok.len();
    let truth: Vec<&str> = ok.iter().map(|p| p.truth.as_deref().unwrap_or("")).collect();
    let predicted: Vec<&str> = ok.iter().map(|p| p.label.as_deref().unwrap_or("")).collect();
    let mut report = EvalReport::from_predictions(&truth, &predicted, &label_set)?;
    report.n_failed = n_failed;
    let mut statuses = BTreeMap::new();
    for p in &ok {
        if let Some(s) = p.parse_status {
            let key = serde_json::to_value(s)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *statuses.entry(key).or_insert(0) += 1;
        }
    }
    report.parse_status = statuses;
    let retrieval_only = match opts.threshold {
        Some(_) => {
            let voted: Vec<&str> = ok
                .iter()
                .map(|p| p.retrieval_vote.as_deref().unwrap_or(""))
                .collect();
            let mut r = EvalReport::from_predictions(&truth, &voted, &label_set)?;
            r.n_failed = n_failed;
            Some(r)
        }
        None => None,
    };
    if let Some(log) = &opts.request_log {
        let ledger = CostLedger::replay(&log.entries(), &opts.rates);
        report.cost = Some(cost_report(&ledger, test.len() as u64));
    }
    report.runtime_ms = start.elapsed().as_millis() as u64;
    Ok(BenchmarkOutcome {
        report,
        retrieval_only,
        predictions,
    })
}
