use serde::Deserialize;
use serde_json::json;

use super::{check_lengths, EmbedError, EmbeddingProvider, EmbeddingVector, ProviderConfig};
use crate::eval::cost::{RequestEntry, RequestKind, RequestLog};
use crate::http::{api_key_from_env, HttpError, JsonEndpoint, RetryPolicy};

/// Client for the common `POST {"model", "input": [...]}` embeddings API.
pub struct RemoteHttpEmbedder {
    endpoint: JsonEndpoint,
    model: String,
    dim: usize,
    batch_size: usize,
    max_text_chars: usize,
    id: String,
    log: RequestLog,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl RemoteHttpEmbedder {
    pub fn new(cfg: &ProviderConfig, log: RequestLog) -> Result<Self, EmbedError> {
        let url = cfg
            .endpoint_url
            .clone()
            .ok_or_else(|| EmbedError::InvalidConfig("remote provider requires endpoint_url".into()))?;
        let var = cfg
            .api_key_env_var
            .clone()
            .ok_or_else(|| EmbedError::AuthMissing("<api_key_env_var unset>".into()))?;
        let key = api_key_from_env(&var).ok_or(EmbedError::AuthMissing(var))?;
        let model = cfg.model_name.clone().unwrap_or_default();
        Ok(Self {
            endpoint: JsonEndpoint::new(
                url,
                key,
                RetryPolicy {
                    max_retries: cfg.max_retries,
                    backoff_base_ms: cfg.backoff_base_ms,
                },
                cfg.timeout_ms,
                cfg.max_in_flight,
            ),
            id: format!("remote:{model}"),
            model,
            dim: cfg.dim,
            batch_size: cfg.batch_size.max(1),
            max_text_chars: cfg.max_text_chars,
            log,
        })
    }

    fn request(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = json!({ "model": self.model, "input": texts });
        let reply = self.endpoint.post(&body)?;
        self.log.record(RequestEntry {
            kind: RequestKind::Embedding,
            provider: self.id.clone(),
            billable: true,
            chars_in: texts.iter().map(|t| t.chars().count() as u64).sum(),
            chars_out: 0,
        });
        let mut parsed: EmbeddingResponse = serde_json::from_value(reply)
            .map_err(|e| EmbedError::from(HttpError::Malformed(e.to_string())))?;
        parsed.data.sort_by_key(|d| d.index);
        let indices: Vec<usize> = parsed.data.iter().map(|d| d.index).collect();
        if indices != (0..texts.len()).collect::<Vec<_>>() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "expected {} embeddings indexed 0.., got indices {indices:?}",
                texts.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(EmbedError::ProviderUnavailable(format!(
                        "embedding has dimension {}, configured {}",
                        d.embedding.len(),
                        self.dim
                    )));
                }
                EmbeddingVector::normalized(&d.embedding, self.id.clone())
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteHttpEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_lengths(texts, self.max_text_chars)?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}
