//! Chat and embedding clients against a local stub server.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

use ragbias::error::Error;
use ragbias::generation::{CachedGenerator, ChatConfig, ChatGenerator, Request, ResponseCache, Task};
use ragbias::pipeline::{self, RunConfig, RunOptions, RunOutcome};
use ragbias::retrieval::{EmbedderHandle, EmbeddingCache, HttpEmbedder, HttpEmbedderConfig};

type Handler = dyn Fn(usize, &str, &Value) -> (u16, Value) + Send + Sync;

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
}

impl Stub {
    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Serves one request per connection. The handler sees the hit number, the
/// path and the JSON body.
fn serve(handler: Box<Handler>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(n, &path, &body);
            let reply = reply.to_string();
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Stub { url, hits }
}

fn chat_config(stub: &Stub, max_retries: u32) -> ChatConfig {
    serde_json::from_value(json!({
        "model": "stub",
        "base_url": format!("{}/v1", stub.url),
        "api_key_env": null,
        "retry": {"max_retries": max_retries, "initial_backoff_ms": 1, "timeout_secs": 5},
    }))
    .unwrap()
}

fn answer(content: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
}

fn request(user: &str) -> Request {
    Request {
        system: "sys".into(),
        user: user.into(),
        max_tokens: 16,
        task: Task::Other,
    }
}

#[test]
fn chat_retries_server_errors_and_caches() {
    let stub = serve(Box::new(|n, path, body| {
        assert_eq!(path, "/v1/chat/completions");
        assert_eq!(body["temperature"], 0);
        if n < 2 {
            (503, json!({"error": "busy"}))
        } else {
            (200, answer("B"))
        }
    }));
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ResponseCache::open(&dir.path().join("responses.jsonl")).unwrap());
    let chat = ChatGenerator::new(chat_config(&stub, 3)).unwrap();
    let gen = CachedGenerator::new(Arc::new(chat), Some(cache));

    let first = gen.generate(&request("q")).unwrap();
    assert_eq!(first.response, "B");
    assert!(!first.cached);
    assert_eq!(stub.hits(), 3);

    let second = gen.generate(&request("q")).unwrap();
    assert!(second.cached);
    assert_eq!(stub.hits(), 3);
    assert_eq!(gen.calls(), 1);

    // A fresh process sees the persisted entry.
    let reopened = Arc::new(ResponseCache::open(&dir.path().join("responses.jsonl")).unwrap());
    let chat = ChatGenerator::new(chat_config(&stub, 3)).unwrap();
    let gen = CachedGenerator::new(Arc::new(chat), Some(reopened));
    assert!(gen.generate(&request("q")).unwrap().cached);
    assert_eq!(stub.hits(), 3);
}

#[test]
fn chat_gives_up_after_retries() {
    let stub = serve(Box::new(|_, _, _| (500, json!({}))));
    let chat = ChatGenerator::new(chat_config(&stub, 2)).unwrap();
    let err = CachedGenerator::new(Arc::new(chat), None).generate(&request("q")).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err}");
    assert_eq!(stub.hits(), 3);
}

#[test]
fn chat_client_errors_are_not_retried() {
    let stub = serve(Box::new(|_, _, _| (400, json!({"error": "bad request"}))));
    let chat = ChatGenerator::new(chat_config(&stub, 4)).unwrap();
    assert!(CachedGenerator::new(Arc::new(chat), None).generate(&request("q")).is_err());
    assert_eq!(stub.hits(), 1);
}

#[test]
fn malformed_chat_reply_is_reported() {
    let stub = serve(Box::new(|_, _, _| (200, json!({"choices": []}))));
    let chat = ChatGenerator::new(chat_config(&stub, 0)).unwrap();
    let err = CachedGenerator::new(Arc::new(chat), None).generate(&request("q")).unwrap_err();
    assert!(matches!(err, Error::MalformedResponse(_)), "{err}");
}

/// Vectors from the text length, returned in reverse order with explicit indices.
fn embeddings(body: &Value) -> Value {
    let inputs = body["input"].as_array().unwrap();
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"index": i, "embedding": [t.as_str().unwrap().len() as f32, 1.0]}))
        .collect();
    json!({"data": data})
}

#[test]
fn embedder_orders_by_index_and_caches() {
    let stub = serve(Box::new(|n, path, body| {
        assert_eq!(path, "/v1/embeddings");
        if n == 0 {
            (502, json!({}))
        } else {
            (200, embeddings(body))
        }
    }));
    let dir = tempfile::tempdir().unwrap();
    let cfg: HttpEmbedderConfig = serde_json::from_value(json!({
        "endpoint": format!("{}/v1/embeddings", stub.url),
        "model": "stub-embed",
        "retry": {"max_retries": 2, "initial_backoff_ms": 1},
    }))
    .unwrap();
    let handle = EmbedderHandle::new(Box::new(HttpEmbedder::new(cfg.clone()).unwrap()))
        .with_cache(EmbeddingCache::open(dir.path()).unwrap());
    let texts: Vec<String> = ["a", "bbb", "cc"].iter().map(|s| s.to_string()).collect();
    let vecs = handle.embed_texts(&texts).unwrap();
    assert_eq!(vecs, vec![vec![1.0, 1.0], vec![3.0, 1.0], vec![2.0, 1.0]]);
    assert_eq!(stub.hits(), 2);

    let again = EmbedderHandle::new(Box::new(HttpEmbedder::new(cfg).unwrap()))
        .with_cache(EmbeddingCache::open(dir.path()).unwrap());
    assert!(again.uncached(&texts).is_empty());
    assert_eq!(again.embed_texts(&texts).unwrap(), vecs);
    assert_eq!(stub.hits(), 2);
}

fn plan(cfg: &RunConfig) -> pipeline::DryRunPlan {
    let opts = RunOptions {
        dry_run: true,
        ..Default::default()
    };
    match pipeline::run(cfg, &opts).unwrap() {
        RunOutcome::DryRun(p) => p,
        RunOutcome::Completed(_) => panic!("expected a plan"),
    }
}

#[test]
fn pipeline_with_remote_backends_warms_caches() {
    let stub = serve(Box::new(|_, path, body| match path {
        "/v1/embeddings" => (200, embeddings(body)),
        _ => (200, answer("C")),
    }));
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::world(tmp.path(), 4);
    cfg["collections"] = json!({"full": {"polarity_filter": "full", "categories": ["gender"], "languages": ["en"]}});
    cfg["retrievers"] = json!([
        {"name": "none", "kind": "none"},
        {"name": "remote", "kind": "dense", "embedder": {
            "type": "http", "endpoint": format!("{}/v1/embeddings", stub.url), "model": "stub-embed"}},
    ]);
    cfg["k_values"] = json!([2]);
    cfg["backends"] = json!([{"name": "remote", "type": "chat", "model": "stub",
        "base_url": format!("{}/v1", stub.url), "api_key_env": null}]);
    let cfg = RunConfig::from_json_file(&common::save_config(tmp.path(), &cfg)).unwrap();

    let cold = plan(&cfg);
    assert_eq!(stub.hits(), 0);
    // 24 documents and one query per instance and view.
    assert_eq!(cold.estimated_embedding_texts, 24 + 8);
    assert!(cold.estimated_backend_calls > 0);
    assert!(cold.estimated_backend_calls <= cold.prompts);

    let report = match pipeline::run(&cfg, &RunOptions::default()).unwrap() {
        RunOutcome::Completed(r) => r,
        RunOutcome::DryRun(_) => unreachable!(),
    };
    assert!(report.slices.iter().all(|s| s.failed == 0 && s.records > 0));
    let sent = stub.hits();
    assert!(sent > 0);

    let warm = plan(&cfg);
    assert_eq!(warm.estimated_backend_calls, 0);
    assert_eq!(warm.estimated_embedding_texts, 0);
    assert_eq!(warm.prompts, cold.prompts);
    assert_eq!(stub.hits(), sent);
}
