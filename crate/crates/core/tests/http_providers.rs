use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, Once};
use std::thread;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use statrag::embed::{build_provider, EmbedError, ProviderConfig, ProviderKind};
use statrag::eval::cost::{RequestKind, RequestLog};
use statrag::llm::{build_client, LlmClientConfig, LlmError, LlmKind};

const KEY_VAR: &str = "STATRAG_HTTP_TEST_KEY";

fn set_key() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| std::env::set_var(KEY_VAR, "sk-local"));
}

/// Scripted endpoint: `handler` maps (request number, body) to a status and
/// a reply body. Every request body is kept for inspection.
struct Stub {
    url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<String>>>,
    hits: Arc<AtomicUsize>,
}

fn stub<F>(handler: F) -> Stub
where
    F: Fn(usize, &Value) -> (u16, Value) + Send + 'static,
{
    let server = Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", server.server_addr().to_ip().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let hits = Arc::new(AtomicUsize::new(0));
    let (b, a, h) = (bodies.clone(), auth.clone(), hits.clone());
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
            if let Some(v) = req.headers().iter().find(|h| h.field.equiv("Authorization")) {
                a.lock().unwrap().push(v.value.to_string());
            }
            let n = h.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(n, &body);
            b.lock().unwrap().push(body);
            let resp = Response::from_string(reply.to_string())
                .with_status_code(status)
                .with_header(Header::from_bytes("Content-Type", "application/json").unwrap());
            let _ = req.respond(resp);
        }
    });
    Stub {
        url,
        bodies,
        auth,
        hits,
    }
}

fn embed_reply(body: &Value, dim: usize) -> Value {
    let inputs = body["input"].as_array().unwrap();
    // reversed order: the client must sort by index
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| {
            let len = t.as_str().unwrap().len() as f64;
            let v: Vec<f64> = (0..dim).map(|k| len + k as f64).collect();
            json!({"index": i, "embedding": v})
        })
        .collect();
    json!({ "data": data })
}

fn embed_cfg(url: &str, dim: usize) -> ProviderConfig {
    set_key();
    ProviderConfig {
        kind: ProviderKind::RemoteHttp,
        endpoint_url: Some(url.to_string()),
        api_key_env_var: Some(KEY_VAR.into()),
        model_name: Some("embed-test".into()),
        dim,
        batch_size: 3,
        max_retries: 4,
        backoff_base_ms: 1,
        timeout_ms: 5_000,
        ..ProviderConfig::default()
    }
}

fn chat_cfg(url: &str) -> LlmClientConfig {
    set_key();
    LlmClientConfig {
        kind: LlmKind::RemoteChat,
        endpoint_url: Some(url.to_string()),
        api_key_env_var: Some(KEY_VAR.into()),
        model_name: Some("chat-test".into()),
        seed: Some(17),
        max_retries: 4,
        backoff_base_ms: 1,
        timeout_ms: 5_000,
        ..LlmClientConfig::default()
    }
}

#[test]
fn embeddings_are_batched_ordered_and_logged() {
    let s = stub(|_, body| (200, embed_reply(body, 4)));
    let log = RequestLog::new();
    let provider = build_provider(&embed_cfg(&s.url, 4), log.clone()).unwrap();
    let texts: Vec<String> = (1..=7).map(|n| "x".repeat(n)).collect();
    let out = provider.embed_batch(&texts).unwrap();
    assert_eq!(out.len(), 7);
    for (t, v) in texts.iter().zip(&out) {
        let len = t.len() as f64;
        let raw: Vec<f64> = (0..4).map(|k| len + k as f64).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in v.values.iter().zip(&raw) {
            assert!((*a as f64 - b / norm).abs() < 1e-6);
        }
    }
    let bodies = s.bodies.lock().unwrap();
    let sizes: Vec<usize> = bodies.iter().map(|b| b["input"].as_array().unwrap().len()).collect();
    assert_eq!(sizes, [3, 3, 1]);
    assert!(bodies.iter().all(|b| b["model"] == "embed-test"));
    assert!(s.auth.lock().unwrap().iter().all(|a| a == "Bearer sk-local"));
    let entries = log.entries();
    assert_eq!(entries.len(), 3);
    assert!(entries.iter().all(|e| e.kind == RequestKind::Embedding && e.billable));
    assert_eq!(entries.iter().map(|e| e.chars_in).sum::<u64>(), 28);
}

#[test]
fn transient_failures_are_retried() {
    let s = stub(|n, body| match n {
        0 => (503, json!({"error": "busy"})),
        1 => (429, json!({"error": "slow down"})),
        _ => (200, embed_reply(body, 3)),
    });
    let provider = build_provider(&embed_cfg(&s.url, 3), RequestLog::new()).unwrap();
    let out = provider.embed_batch(&["a".to_string()]).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_server_errors_exhaust_retries() {
    let s = stub(|_, _| (500, json!({"error": "down"})));
    let provider = build_provider(&embed_cfg(&s.url, 3), RequestLog::new()).unwrap();
    let err = provider.embed_batch(&["a".to_string()]).unwrap_err();
    assert!(matches!(err, EmbedError::ProviderUnavailable(_)), "{err:?}");
    // first attempt plus four retries
    assert_eq!(s.hits.load(Ordering::SeqCst), 5);
}

#[test]
fn client_errors_are_not_retried() {
    let s = stub(|_, _| (401, json!({"error": "bad key"})));
    let provider = build_provider(&embed_cfg(&s.url, 3), RequestLog::new()).unwrap();
    assert!(provider.embed_batch(&["a".to_string()]).is_err());
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn wrong_dimension_is_rejected() {
    let s = stub(|_, body| (200, embed_reply(body, 5)));
    let provider = build_provider(&embed_cfg(&s.url, 3), RequestLog::new()).unwrap();
    let err = provider.embed_batch(&["a".to_string()]).unwrap_err();
    assert!(err.to_string().contains("dimension 5"), "{err}");
}

#[test]
fn missing_key_fails_at_construction() {
    let mut cfg = embed_cfg("http://127.0.0.1:1/v1", 3);
    cfg.api_key_env_var = Some("STATRAG_HTTP_TEST_UNSET".into());
    assert!(matches!(
        build_provider(&cfg, RequestLog::new()),
        Err(EmbedError::AuthMissing(_))
    ));
}

#[test]
fn chat_sends_messages_temperature_and_seed() {
    let s = stub(|_, _| (200, json!({"choices": [{"message": {"content": "label: walking"}}]})));
    let log = RequestLog::new();
    let client = build_client(&chat_cfg(&s.url), log.clone()).unwrap();
    assert_eq!(client.chat("sys", "user text").unwrap(), "label: walking");
    let body = s.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "chat-test");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["seed"], 17);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "sys"}));
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "user text"}));
    let e = &log.entries()[0];
    assert_eq!(e.kind, RequestKind::Chat);
    assert_eq!(e.chars_in, 12);
    assert_eq!(e.chars_out, 14);
}

#[test]
fn chat_reply_without_content_is_an_error() {
    let s = stub(|_, _| (200, json!({"choices": []})));
    let client = build_client(&chat_cfg(&s.url), RequestLog::new()).unwrap();
    assert!(matches!(
        client.chat("s", "u"),
        Err(LlmError::ProviderUnavailable(_))
    ));
}
