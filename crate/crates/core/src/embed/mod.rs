//! Text embedding providers. Every returned vector is L2-normalized, so
//! cosine similarity downstream is a plain dot product.

mod local;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::cost::RequestLog;
use crate::http::HttpError;

pub use local::LocalDeterministicEmbedder;
pub use remote::RemoteHttpEmbedder;

/// Default embedding width, matching common hosted text-embedding models.
pub const DEFAULT_DIM: usize = 1536;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("api key environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("text {index} has {chars} characters, limit is {limit}")]
    TextTooLong {
        index: usize,
        chars: usize,
        limit: usize,
    },
    #[error("text contains no numeric content")]
    NoNumericContent,
    #[error("embedding is all zeros")]
    Degenerate,
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
}

impl From<HttpError> for EmbedError {
    fn from(e: HttpError) -> Self {
        EmbedError::ProviderUnavailable(e.to_string())
    }
}

/// An L2-normalized embedding and the provider that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub provider_id: String,
}

impl EmbeddingVector {
    /// Normalizes `raw` to unit length; fails on non-finite or all-zero input.
    pub fn normalized(raw: &[f64], provider_id: impl Into<String>) -> Result<Self, EmbedError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::ProviderUnavailable(
                "non-finite embedding value".into(),
            ));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::Degenerate);
        }
        Ok(Self {
            values: raw.iter().map(|v| (v / norm) as f32).collect(),
            provider_id: provider_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

/// Cosine similarity accumulated in `f64`.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0_f64;
    let mut na = 0.0_f64;
    let mut nb = 0.0_f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteHttp,
    LocalDeterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint_url: Option<String>,
    pub api_key_env_var: Option<String>,
    pub model_name: Option<String>,
    pub dim: usize,
    pub batch_size: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_ms: u64,
    pub max_text_chars: usize,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::LocalDeterministic,
            endpoint_url: None,
            api_key_env_var: None,
            model_name: None,
            dim: DEFAULT_DIM,
            batch_size: 64,
            max_retries: 5,
            backoff_base_ms: 500,
            timeout_ms: 30_000,
            max_text_chars: 32_000,
            max_in_flight: 4,
        }
    }
}

impl ProviderConfig {
    pub fn local(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.batch_size == 0 {
            return Err(EmbedError::InvalidConfig("batch_size must be >= 1".into()));
        }
        match self.kind {
            ProviderKind::LocalDeterministic if self.dim < 8 => Err(EmbedError::InvalidConfig(
                "local embedder needs dim >= 8".into(),
            )),
            ProviderKind::RemoteHttp if self.endpoint_url.is_none() => Err(
                EmbedError::InvalidConfig("remote provider requires endpoint_url".into()),
            ),
            _ if self.dim == 0 => Err(EmbedError::InvalidConfig("dim must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

/// A source of text embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn dim(&self) -> usize;

    /// One unit vector per text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Builds the provider described by `cfg`, recording requests into `log`.
pub fn build_provider(
    cfg: &ProviderConfig,
    log: RequestLog,
) -> Result<Arc<dyn EmbeddingProvider>, EmbedError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::LocalDeterministic => Arc::new(LocalDeterministicEmbedder::new(cfg, log)),
        ProviderKind::RemoteHttp => Arc::new(RemoteHttpEmbedder::new(cfg, log)?),
    })
}

/// One-shot convenience: builds the provider for `cfg` and embeds `texts`.
pub fn embed_batch(cfg: &ProviderConfig, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    build_provider(cfg, RequestLog::new())?.embed_batch(texts)
}

pub(crate) fn check_lengths(texts: &[String], limit: usize) -> Result<(), EmbedError> {
    for (index, t) in texts.iter().enumerate() {
        let chars = t.chars().count();
        if chars > limit {
            return Err(EmbedError::TextTooLong {
                index,
                chars,
                limit,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        let v = EmbeddingVector::normalized(&[3.0, 4.0], "t").unwrap();
        assert_eq!(v.values, vec![0.6, 0.8]);
        assert_eq!(
            EmbeddingVector::normalized(&[0.0, 0.0], "t").unwrap_err(),
            EmbedError::Degenerate
        );
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - 0.5_f64.sqrt()).abs() < 1e-7);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::local(16);
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let remote = ProviderConfig {
            kind: ProviderKind::RemoteHttp,
            ..ProviderConfig::default()
        };
        assert!(remote.validate().is_err());
        assert!(ProviderConfig::local(4).validate().is_err());
    }

    #[test]
    fn text_too_long() {
        let cfg = ProviderConfig {
            max_text_chars: 5,
            ..ProviderConfig::local(16)
        };
        let err = embed_batch(&cfg, &["mean=1".to_string()]).unwrap_err();
        assert_eq!(
            err,
            EmbedError::TextTooLong {
                index: 0,
                chars: 6,
                limit: 5
            }
        );
    }
}
