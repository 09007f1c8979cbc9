//! Metrics, reports, benchmark orchestration and cost accounting.

pub mod benchmark;
pub mod cost;
pub mod metrics;
pub mod report;

pub use benchmark::{
    evaluate_pipeline, predict_windows, run_benchmark, BenchmarkOptions, BenchmarkOutcome,
    WindowPrediction,
};
pub use report::EvalReport;
