//! Training-free activity recognition over multi-channel sensor windows.
//!
//! Windows are summarized as statistical text (or LLM-written descriptors),
//! embedded four times (full window and its thirds), indexed in a
//! multi-vector store and classified by an LLM prompted with the top
//! re-ranked neighbors.

pub mod classify;
pub mod config;
pub mod describe;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod http;
pub mod ingest;
pub mod llm;
pub mod openset;
pub mod optimize;
pub mod pipeline;
pub mod scalar;
pub mod store;

pub use config::EngineConfig;
pub use error::{Error, Result};
pub use pipeline::{Components, Pipeline, PipelineSettings};

/// Window over the default scalar type.
pub type Window = ingest::SensorWindow<f64>;
