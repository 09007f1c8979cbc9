use std::collections::HashMap;
use std::sync::{Arc, LazyLock, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;

use super::{check_lengths, EmbedError, EmbeddingProvider, EmbeddingVector, ProviderConfig};
use crate::eval::cost::{RequestEntry, RequestKind, RequestLog};

const PROJECTION_SEED: u64 = 0x005E_ED0F_F1A7_u64;
/// Weight added to every token so an all-zero feature text still embeds.
const PRESENCE_WEIGHT: f64 = 1e-3;

static TOKENS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?P<word>[A-Za-z_][A-Za-z0-9_]*)|(?P<num>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)")
        .expect("token regex")
});

/// Offline stand-in for a pre-trained text embedder.
///
/// Each numeric token is keyed by the identifier preceding it and its ordinal
/// position among numbers, and contributes its value times a fixed Gaussian
/// row derived from that key. The result is a seeded random projection of the
/// feature vector: equal names and values give equal vectors, and small value
/// changes give small cosine changes.
pub struct LocalDeterministicEmbedder {
    dim: usize,
    max_text_chars: usize,
    id: String,
    rows: RwLock<HashMap<u64, Arc<[f64]>>>,
    log: RequestLog,
}

impl LocalDeterministicEmbedder {
    pub fn new(cfg: &ProviderConfig, log: RequestLog) -> Self {
        Self {
            dim: cfg.dim,
            max_text_chars: cfg.max_text_chars,
            id: format!("local-deterministic-{}", cfg.dim),
            rows: RwLock::new(HashMap::new()),
            log,
        }
    }

    fn row(&self, key: u64) -> Arc<[f64]> {
        if let Some(row) = self.rows.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return row.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key ^ PROJECTION_SEED);
        let row: Arc<[f64]> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f64>>()
            .into();
        self.rows
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .entry(key)
            .or_insert(row)
            .clone()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut acc = vec![0.0_f64; self.dim];
        let mut last_word = "";
        let mut position = 0u64;
        for cap in TOKENS.captures_iter(text) {
            if let Some(w) = cap.name("word") {
                last_word = w.as_str();
                continue;
            }
            let Some(num) = cap.name("num") else { continue };
            let Ok(value) = num.as_str().parse::<f64>() else {
                continue;
            };
            if !value.is_finite() {
                continue;
            }
            let key = ((crc32fast::hash(last_word.as_bytes()) as u64) << 32) | position;
            position += 1;
            let weight = value + PRESENCE_WEIGHT;
            for (a, r) in acc.iter_mut().zip(self.row(key).iter()) {
                *a += weight * r;
            }
        }
        if position == 0 {
            return Err(EmbedError::NoNumericContent);
        }
        EmbeddingVector::normalized(&acc, self.id.clone())
    }
}

impl EmbeddingProvider for LocalDeterministicEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_lengths(texts, self.max_text_chars)?;
        let out = texts
            .iter()
            .map(|t| self.embed_one(t))
            .collect::<Result<Vec<_>, _>>()?;
        if !texts.is_empty() {
            self.log.record(RequestEntry {
                kind: RequestKind::Embedding,
                provider: self.id.clone(),
                billable: false,
                chars_in: texts.iter().map(|t| t.chars().count() as u64).sum(),
                chars_out: 0,
            });
        }
        Ok(out)
    }
}
