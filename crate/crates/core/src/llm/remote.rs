use serde_json::{json, Value};

use super::{ChatClient, LlmClientConfig, LlmError};
use crate::eval::cost::{RequestEntry, RequestKind, RequestLog};
use crate::http::{api_key_from_env, JsonEndpoint, RetryPolicy};

/// Client for the common `POST {"model", "messages": [...]}` chat API.
pub struct RemoteChat {
    endpoint: JsonEndpoint,
    model: String,
    temperature: f64,
    seed: Option<u64>,
    id: String,
    log: RequestLog,
}

impl RemoteChat {
    pub fn new(cfg: &LlmClientConfig, log: RequestLog) -> Result<Self, LlmError> {
        let url = cfg
            .endpoint_url
            .clone()
            .ok_or_else(|| LlmError::InvalidConfig("remote chat requires endpoint_url".into()))?;
        let var = cfg
            .api_key_env_var
            .clone()
            .ok_or_else(|| LlmError::AuthMissing("<api_key_env_var unset>".into()))?;
        let key = api_key_from_env(&var).ok_or(LlmError::AuthMissing(var))?;
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
            temperature: cfg.temperature,
            seed: cfg.seed,
            log,
        })
    }
}

fn reply_text(v: &Value) -> Option<&str> {
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

impl ChatClient for RemoteChat {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.temperature,
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        let reply = self.endpoint.post(&body)?;
        let text = reply_text(&reply)
            .ok_or_else(|| {
                LlmError::ProviderUnavailable("reply lacks choices[0].message.content".into())
            })?
            .to_string();
        self.log.record(RequestEntry {
            kind: RequestKind::Chat,
            provider: self.id.clone(),
            billable: true,
            chars_in: (system.chars().count() + user.chars().count()) as u64,
            chars_out: text.chars().count() as u64,
        });
        Ok(text)
    }
}
