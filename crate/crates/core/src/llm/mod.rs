//! Chat-completion clients. The classifier, the prompt optimizer, the
//! descriptor generator and the open-set labeler all talk to an LLM through
//! [`ChatClient`].

mod mock;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::cost::RequestLog;
use crate::http::HttpError;

pub use mock::MockLlm;
pub use remote::RemoteChat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("llm provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("llm request timed out: {0}")]
    Timeout(String),
    #[error("api key environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("invalid llm config: {0}")]
    InvalidConfig(String),
}

impl From<HttpError> for LlmError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::TimedOut { .. } => LlmError::Timeout(e.to_string()),
            other => LlmError::ProviderUnavailable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    RemoteChat,
    /// Offline deterministic client. Classification prompts get the modal
    /// retrieved label; the other prompt families get seeded stand-ins.
    MockMajority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmClientConfig {
    pub kind: LlmKind,
    pub endpoint_url: Option<String>,
    pub api_key_env_var: Option<String>,
    pub model_name: Option<String>,
    /// Sent as-is; 0 asks for greedy decoding.
    pub temperature: f64,
    /// Forwarded to endpoints that support seeded sampling.
    pub seed: Option<u64>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Seed for the mock's instruction variants.
    pub mock_seed: u64,
    /// Fixed reply of the mock to unseen-activity naming prompts.
    pub mock_label_reply: Option<String>,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            kind: LlmKind::MockMajority,
            endpoint_url: None,
            api_key_env_var: None,
            model_name: None,
            temperature: 0.0,
            seed: None,
            max_retries: 5,
            backoff_base_ms: 500,
            timeout_ms: 60_000,
            max_in_flight: 4,
            mock_seed: 0,
            mock_label_reply: None,
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.kind == LlmKind::RemoteChat && self.endpoint_url.is_none() {
            return Err(LlmError::InvalidConfig(
                "remote chat requires endpoint_url".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A system + user prompt in, reply text out.
pub trait ChatClient: Send + Sync {
    fn client_id(&self) -> &str;

    fn chat(&self, system: &str, user: &str) -> Result<String, LlmError>;
}

pub fn build_client(cfg: &LlmClientConfig, log: RequestLog) -> Result<Arc<dyn ChatClient>, LlmError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        LlmKind::MockMajority => Arc::new(MockLlm::from_config(cfg, log)),
        LlmKind::RemoteChat => Arc::new(RemoteChat::new(cfg, log)?),
    })
}
