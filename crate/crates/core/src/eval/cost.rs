use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

/// Characters per estimated token.
pub const CHARS_PER_TOKEN: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Embedding,
    Chat,
}

/// One provider request as seen by the cost ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEntry {
    pub kind: RequestKind,
    pub provider: String,
    /// Local providers are recorded but never priced.
    pub billable: bool,
    pub chars_in: u64,
    pub chars_out: u64,
}

impl RequestEntry {
    pub fn tokens_in(&self) -> u64 {
        self.chars_in.div_ceil(CHARS_PER_TOKEN)
    }

    pub fn tokens_out(&self) -> u64 {
        self.chars_out.div_ceil(CHARS_PER_TOKEN)
    }
}

/// Shared append-only log of provider requests.
#[derive(Debug, Clone, Default)]
pub struct RequestLog {
    entries: Arc<Mutex<Vec<RequestEntry>>>,
}

impl RequestLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, entry: RequestEntry) {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(entry);
    }

    pub fn entries(&self) -> Vec<RequestEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for entry in self.entries() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> std::io::Result<Vec<RequestEntry>> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(entries)
    }
}

/// Prices in currency units per 1,000 estimated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostRates {
    pub embedding_per_1k_tokens: f64,
    pub llm_input_per_1k_tokens: f64,
    pub llm_output_per_1k_tokens: f64,
}

impl Default for CostRates {
    fn default() -> Self {
        Self {
            embedding_per_1k_tokens: 0.00002,
            llm_input_per_1k_tokens: 0.00025,
            llm_output_per_1k_tokens: 0.002,
        }
    }
}

/// Aggregated request counts and estimated cost. Token counts are estimates
/// (`ceil(chars / 4)` per request), not provider-reported usage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub embedding_requests: u64,
    pub embedding_chars: u64,
    pub embedding_tokens_est: u64,
    pub llm_requests: u64,
    pub llm_chars_in: u64,
    pub llm_chars_out: u64,
    pub llm_tokens_in_est: u64,
    pub llm_tokens_out_est: u64,
    pub embedding_cost: f64,
    pub llm_input_cost: f64,
    pub llm_output_cost: f64,
    pub total_cost: f64,
}

impl CostLedger {
    /// Rebuilds the ledger from individual request entries.
    pub fn replay(entries: &[RequestEntry], rates: &CostRates) -> Self {
        let mut l = CostLedger::default();
        for e in entries {
            let price = if e.billable { 1.0 } else { 0.0 };
            match e.kind {
                RequestKind::Embedding => {
                    l.embedding_requests += 1;
                    l.embedding_chars += e.chars_in;
                    l.embedding_tokens_est += e.tokens_in();
                    l.embedding_cost +=
                        price * e.tokens_in() as f64 / 1000.0 * rates.embedding_per_1k_tokens;
                }
                RequestKind::Chat => {
                    l.llm_requests += 1;
                    l.llm_chars_in += e.chars_in;
                    l.llm_chars_out += e.chars_out;
                    l.llm_tokens_in_est += e.tokens_in();
                    l.llm_tokens_out_est += e.tokens_out();
                    l.llm_input_cost +=
                        price * e.tokens_in() as f64 / 1000.0 * rates.llm_input_per_1k_tokens;
                    l.llm_output_cost +=
                        price * e.tokens_out() as f64 / 1000.0 * rates.llm_output_per_1k_tokens;
                }
            }
        }
        l.total_cost = l.embedding_cost + l.llm_input_cost + l.llm_output_cost;
        l
    }
}

/// Ledger plus per-sample amortization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub ledger: CostLedger,
    pub n_samples: u64,
    pub per_sample_cost: f64,
}

pub fn cost_report(ledger: &CostLedger, n_samples: u64) -> CostSummary {
    let per_sample_cost = if n_samples == 0 {
        0.0
    } else {
        ledger.total_cost / n_samples as f64
    };
    CostSummary {
        ledger: ledger.clone(),
        n_samples,
        per_sample_cost,
    }
}

impl CostSummary {
    pub fn to_text(&self) -> String {
        let l = &self.ledger;
        format!(
            "embedding requests : {}\n\
             embedding tokens   : {} (estimated)\n\
             llm requests       : {}\n\
             llm tokens in/out  : {} / {} (estimated)\n\
             embedding cost     : {:.6}\n\
             llm input cost     : {:.6}\n\
             llm output cost    : {:.6}\n\
             total cost         : {:.6}\n\
             samples            : {}\n\
             per-sample cost    : {:.6}\n",
            l.embedding_requests,
            l.embedding_tokens_est,
            l.llm_requests,
            l.llm_tokens_in_est,
            l.llm_tokens_out_est,
            l.embedding_cost,
            l.llm_input_cost,
            l.llm_output_cost,
            l.total_cost,
            self.n_samples,
            self.per_sample_cost,
        )
    }
}
