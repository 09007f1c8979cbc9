//! Blocking JSON-over-HTTP plumbing shared by the remote embedding and chat
//! clients: bearer auth, bounded in-flight requests and retry with
//! exponential backoff.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

const MAX_BACKOFF_MS: u64 = 30_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HttpError {
    /// Every attempt failed with a retriable condition.
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    /// Every attempt timed out.
    #[error("timed out after {attempts} attempts")]
    TimedOut { attempts: u32 },
    /// Non-retriable status (4xx other than 429).
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .backoff_base_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(MAX_BACKOFF_MS);
        Duration::from_millis(ms)
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a ConcurrencyLimit,
}

impl ConcurrencyLimit {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            available: Mutex::new(max_in_flight.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit { limit: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.limit.available.lock().unwrap_or_else(|e| e.into_inner());
        *available += 1;
        self.limit.freed.notify_one();
    }
}

/// A JSON POST client for one endpoint.
pub struct JsonEndpoint {
    agent: ureq::Agent,
    url: String,
    api_key: String,
    retry: RetryPolicy,
    limit: ConcurrencyLimit,
}

impl JsonEndpoint {
    pub fn new(
        url: impl Into<String>,
        api_key: impl Into<String>,
        retry: RetryPolicy,
        timeout_ms: u64,
        max_in_flight: usize,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: url.into(),
            api_key: api_key.into(),
            retry,
            limit: ConcurrencyLimit::new(max_in_flight),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body`, retrying transport errors, timeouts, 429 and 5xx.
    pub fn post(&self, body: &Value) -> Result<Value, HttpError> {
        let attempts = self.retry.max_retries + 1;
        let mut last = String::new();
        let mut all_timeouts = true;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            let _permit = self.limit.acquire();
            let sent = self
                .agent
                .post(&self.url)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(body);
            let mut resp = match sent {
                Ok(resp) => resp,
                Err(ureq::Error::Timeout(t)) => {
                    last = format!("timeout ({t})");
                    tracing::warn!(url = %self.url, attempt, "request timed out");
                    continue;
                }
                Err(e) => {
                    all_timeouts = false;
                    last = e.to_string();
                    tracing::warn!(url = %self.url, attempt, error = %e, "request failed");
                    continue;
                }
            };
            all_timeouts = false;
            let status = resp.status().as_u16();
            if (200..300).contains(&status) {
                return resp
                    .body_mut()
                    .read_json::<Value>()
                    .map_err(|e| HttpError::Malformed(e.to_string()));
            }
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            if status == 429 || status >= 500 {
                last = format!("status {status}");
                tracing::warn!(url = %self.url, attempt, status, "retriable status");
                continue;
            }
            return Err(HttpError::Rejected { status, body: text });
        }
        if all_timeouts {
            Err(HttpError::TimedOut { attempts })
        } else {
            Err(HttpError::Exhausted { attempts, last })
        }
    }
}

/// Opens and drops a TCP connection to the endpoint's host; sends nothing.
pub fn probe_endpoint(url: &str, timeout: Duration) -> Result<(), String> {
    use std::net::{TcpStream, ToSocketAddrs};

    let uri: ureq::http::Uri = url.parse().map_err(|e| format!("bad url `{url}`: {e}"))?;
    let host = uri.host().ok_or_else(|| format!("no host in `{url}`"))?;
    let port = uri
        .port_u16()
        .unwrap_or(if uri.scheme_str() == Some("http") { 80 } else { 443 });
    let addrs = (host, port)
        .to_socket_addrs()
        .map_err(|e| format!("cannot resolve {host}: {e}"))?;
    let mut last = format!("{host} has no addresses");
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(_) => return Ok(()),
            Err(e) => last = format!("{addr}: {e}"),
        }
    }
    Err(last)
}

/// Reads an API key from the named environment variable.
pub fn api_key_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|k| !k.trim().is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            backoff_base_ms: 100,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(3), Duration::from_millis(800));
        assert_eq!(p.backoff(40), Duration::from_millis(MAX_BACKOFF_MS));
    }

    #[test]
    fn limit_bounds_in_flight() {
        let limit = Arc::new(ConcurrencyLimit::new(2));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limit, current, peak) = (limit.clone(), current.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = limit.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
