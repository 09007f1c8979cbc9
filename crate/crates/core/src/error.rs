use thiserror::Error;

use crate::classify::ClassifyError;
use crate::describe::DescribeError;
use crate::embed::EmbedError;
use crate::eval::metrics::MetricsError;
use crate::features::FeatureError;
use crate::ingest::IngestError;
use crate::llm::LlmError;
use crate::openset::OpenSetError;
use crate::optimize::OptimizeError;
use crate::store::StoreError;

/// Any failure surfaced by the end-to-end pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Describe(#[from] DescribeError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    OpenSet(#[from] OpenSetError),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
