//! HTTP clients against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use lvr_core::aural::Reranker;
use lvr_core::providers::{EmbeddingProvider, HttpEmbeddingProvider, HttpReranker, HttpSettings, ProviderError};

struct Canned {
    url: String,
    requests: Arc<Mutex<Vec<(String, String)>>>,
    handle: JoinHandle<()>,
}

/// Serves one canned `(status, body)` per connection, in order, then exits.
fn serve(responses: Vec<(u16, &'static str)>) -> Canned {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/embed", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut auth = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((auth, String::from_utf8(buf).unwrap()));
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    Canned { url, requests, handle }
}

fn settings() -> HttpSettings {
    HttpSettings {
        timeout: Duration::from_secs(5),
        retries: 2,
        backoff: Duration::from_millis(5),
        bearer_token: None,
        batch_size: 64,
        max_in_flight: 1,
    }
}

fn texts(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn embeds_pass_through() {
    let server = serve(vec![(200, r#"{"vectors":[[1,0,0],[0,0.5,0.5]]}"#)]);
    let p = HttpEmbeddingProvider::new(&server.url, 3, settings()).unwrap();
    let out = p.embed_texts(&texts(&["add oil", "stir"])).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[1].values(), &[0.0, 0.5, 0.5]);
    server.handle.join().unwrap();
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].1, r#"{"texts":["add oil","stir"]}"#);
}

#[test]
fn cardinality_mismatch_is_an_error() {
    let server = serve(vec![(200, r#"{"vectors":[[1,0]]}"#)]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, settings()).unwrap();
    let err = p.embed_texts(&texts(&["a", "b"])).unwrap_err();
    assert!(matches!(err, ProviderError::CardinalityMismatch { sent: 2, received: 1 }));
    assert!(err.to_string().starts_with("cardinality mismatch"));
}

#[test]
fn dimension_disagreement_is_an_error() {
    let server = serve(vec![(200, r#"{"vectors":[[1,0],[1,0,0]]}"#)]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, settings()).unwrap();
    assert!(matches!(
        p.embed_texts(&texts(&["a", "b"])),
        Err(ProviderError::DimensionMismatch { expected: 2, received: 3 })
    ));
}

#[test]
fn transient_failure_is_retried() {
    let server = serve(vec![(503, "busy"), (200, r#"{"vectors":[[0.6,0.8]]}"#)]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, settings()).unwrap();
    let out = p.embed_texts(&texts(&["a"])).unwrap();
    assert_eq!(out[0].values(), &[0.6, 0.8]);
    server.handle.join().unwrap();
    assert_eq!(server.requests.lock().unwrap().len(), 2);
}

#[test]
fn permanent_failure_surfaces_without_retry() {
    let server = serve(vec![(400, "bad request")]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, settings()).unwrap();
    let err = p.embed_texts(&texts(&["a"])).unwrap_err();
    assert!(err.to_string().contains("400"), "{err}");
    server.handle.join().unwrap();
}

#[test]
fn retries_are_bounded() {
    let server = serve(vec![(500, "x"), (500, "x"), (500, "x")]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, settings()).unwrap();
    assert!(p.embed_texts(&texts(&["a"])).is_err());
    server.handle.join().unwrap();
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn batches_split_requests_and_keep_order() {
    let server = serve(vec![
        (200, r#"{"vectors":[[1,0],[0,1]]}"#),
        (200, r#"{"vectors":[[1,1]]}"#),
    ]);
    let s = HttpSettings {
        batch_size: 2,
        bearer_token: Some("sekrit".into()),
        ..settings()
    };
    let p = HttpEmbeddingProvider::new(&server.url, 2, s).unwrap();
    let out = p.embed_clips(&texts(&["v:0", "v:1", "v:2"])).unwrap();
    assert_eq!(out[2].values(), &[1.0, 1.0]);
    server.handle.join().unwrap();
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0], ("Bearer sekrit".to_string(), r#"{"clip_ids":["v:0","v:1"]}"#.to_string()));
    assert_eq!(reqs[1].1, r#"{"clip_ids":["v:2"]}"#);
}

#[test]
fn connection_refused_is_transient_and_reported() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let p = HttpEmbeddingProvider::new(url, 2, HttpSettings { retries: 1, ..settings() }).unwrap();
    assert!(p.embed_texts(&texts(&["a"])).is_err());
}

#[test]
fn reranker_round_trip_and_repair() {
    let server = serve(vec![(200, r#"{"ranking":["c3","nope","c1"]}"#)]);
    let reranker = HttpReranker::new(&server.url, settings()).unwrap();
    let candidates = lvr_core::aural::RerankCandidate {
        id: "c1".into(),
        text: "heat oil".into(),
    };
    let ranking = reranker.rerank("add oil", &[candidates]).unwrap();
    assert_eq!(ranking, ["c3", "nope", "c1"]);
    server.handle.join().unwrap();
    assert_eq!(
        server.requests.lock().unwrap()[0].1,
        r#"{"query":"add oil","candidates":[{"id":"c1","text":"heat oil"}]}"#
    );
}

#[test]
fn reranker_failures_carry_fallback_flag() {
    let server = serve(vec![(502, "upstream"), (502, "upstream"), (502, "upstream")]);
    let reranker = HttpReranker::new(&server.url, settings()).unwrap();
    let err = reranker.rerank("q", &[]).unwrap_err();
    assert!(err.fallback_allowed);
    server.handle.join().unwrap();

    let server = serve(vec![(422, "nope")]);
    let reranker = HttpReranker::new(&server.url, settings()).unwrap();
    assert!(!reranker.rerank("q", &[]).unwrap_err().fallback_allowed);

    let server = serve(vec![(200, r#"{"order":[]}"#)]);
    let reranker = HttpReranker::new(&server.url, settings()).unwrap();
    assert!(reranker.rerank("q", &[]).unwrap_err().fallback_allowed);
}
