use super::{ChatClient, LlmClientConfig, LlmError};
use crate::eval::cost::{RequestEntry, RequestKind, RequestLog};
use crate::{classify, describe, openset, optimize};

/// Offline client. Recognizes each prompt family by its section headers and
/// answers deterministically:
///
/// - classification: modal label of the labeled samples
/// - descriptor: facets computed from the raw samples in the prompt
/// - meta-prompt: a seeded variant of the selected instructions
/// - unseen-activity naming: the configured reply, else a fixed name
pub struct MockLlm {
    seed: u64,
    label_reply: Option<String>,
    log: RequestLog,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            label_reply: None,
            log: RequestLog::new(),
        }
    }

    pub fn from_config(cfg: &LlmClientConfig, log: RequestLog) -> Self {
        Self {
            seed: cfg.mock_seed,
            label_reply: cfg.mock_label_reply.clone(),
            log,
        }
    }

    pub fn with_label_reply(mut self, reply: impl Into<String>) -> Self {
        self.label_reply = Some(reply.into());
        self
    }

    pub fn with_log(mut self, log: RequestLog) -> Self {
        self.log = log;
        self
    }

    fn answer(&self, user: &str) -> String {
        if user.contains(openset::UNSEEN_HEADER) {
            self.label_reply
                .clone()
                .unwrap_or_else(|| "label: unseen activity".to_string())
        } else if user.contains(describe::RAW_SAMPLES_HEADER) {
            describe::mock_descriptor_reply(user)
        } else if user.contains(optimize::META_HEADER) {
            optimize::mock_generator_reply(user, self.seed)
        } else if user.contains(classify::LABELED_HEADER) {
            classify::mock_majority_reply(user)
        } else {
            String::new()
        }
    }
}

impl ChatClient for MockLlm {
    fn client_id(&self) -> &str {
        "mock"
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let reply = self.answer(user);
        self.log.record(RequestEntry {
            kind: RequestKind::Chat,
            provider: "mock".into(),
            billable: false,
            chars_in: (system.chars().count() + user.chars().count()) as u64,
            chars_out: reply.chars().count() as u64,
        });
        Ok(reply)
    }
}
