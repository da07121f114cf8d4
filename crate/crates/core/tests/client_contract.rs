//! Replays the shared wire-contract fixture against the HTTP clients.

mod common;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use astra_core::index::EMBEDDING_DIM;
use astra_core::retrieval::{
    normalize_prompt, retrieve, Embedding, FallbackEmbedder, GateConfig, HashingEmbedder,
    HttpEmbedder, HttpNormalizer, Normalization, PromptNormalizer, QuerySource, RetrievalError,
    TextEmbedder, UserPrompt,
};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Clone, Deserialize)]
struct Case {
    name: String,
    endpoint: String,
    request: Value,
    status: u16,
    response: Value,
    expect: String,
}

#[derive(Debug, Deserialize)]
struct Contract {
    embedding_dim: usize,
    norm_tolerance: f64,
    cases: Vec<Case>,
}

fn contract() -> Contract {
    let text = std::fs::read_to_string(common::fixture("client_contract.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

type Replies = Arc<HashMap<(String, String), (u16, Value)>>;

#[derive(Clone)]
struct Mock {
    replies: Replies,
    seen: Arc<Mutex<Vec<(String, Value)>>>,
    delay: Duration,
}

async fn reply(endpoint: &str, mock: Mock, body: Value) -> (StatusCode, Json<Value>) {
    mock.seen
        .lock()
        .unwrap()
        .push((endpoint.to_string(), body.clone()));
    if !mock.delay.is_zero() {
        tokio::time::sleep(mock.delay).await;
    }
    let text = body["text"].as_str().unwrap_or_default().to_string();
    match mock.replies.get(&(endpoint.to_string(), text)) {
        Some((status, value)) => (StatusCode::from_u16(*status).unwrap(), Json(value.clone())),
        None => (StatusCode::NOT_FOUND, Json(Value::Null)),
    }
}

/// Serves the fixture replies on an ephemeral port from a background thread.
fn spawn_mock(cases: &[Case], delay: Duration) -> (String, Mock) {
    let replies: HashMap<_, _> = cases
        .iter()
        .map(|c| {
            (
                (
                    c.endpoint.clone(),
                    c.request["text"].as_str().unwrap().to_string(),
                ),
                (c.status, c.response.clone()),
            )
        })
        .collect();
    let mock = Mock {
        replies: Arc::new(replies),
        seen: Arc::default(),
        delay,
    };
    let app = Router::new()
        .route(
            "/embed",
            post(|State(m): State<Mock>, Json(b): Json<Value>| reply("/embed", m, b)),
        )
        .route(
            "/normalize",
            post(|State(m): State<Mock>, Json(b): Json<Value>| reply("/normalize", m, b)),
        )
        .with_state(mock.clone());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}"), mock)
}

const TIMEOUT: Duration = Duration::from_secs(2);

#[test]
fn fixture_cases_hold_against_clients() {
    let contract = contract();
    assert_eq!(contract.embedding_dim, EMBEDDING_DIM);
    let (base, mock) = spawn_mock(&contract.cases, Duration::ZERO);
    let embedder = HttpEmbedder::new(&base, TIMEOUT).unwrap();
    let normalizer = HttpNormalizer::new(&base, TIMEOUT).unwrap();

    for case in &contract.cases {
        let text = case.request["text"].as_str().unwrap();
        let ok = match case.endpoint.as_str() {
            "/embed" => match embedder.embed(text) {
                Ok(Embedding::Vector(v)) => {
                    assert_eq!(v.len(), contract.embedding_dim, "{}", case.name);
                    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                    assert!(
                        (norm - 1.0).abs() <= contract.norm_tolerance,
                        "{}",
                        case.name
                    );
                    true
                }
                Ok(other) => panic!("{}: unexpected {other:?}", case.name),
                Err(_) => false,
            },
            "/normalize" => match normalizer.normalize(text) {
                Ok(canonical) => {
                    assert_eq!(canonical, case.response["canonical"], "{}", case.name);
                    true
                }
                Err(_) => false,
            },
            other => panic!("unknown endpoint {other}"),
        };
        assert_eq!(ok, case.expect == "ok", "case {}", case.name);
    }

    // Request bodies are exactly the fixture requests.
    let seen = mock.seen.lock().unwrap();
    assert_eq!(seen.len(), contract.cases.len());
    for (case, (endpoint, body)) in contract.cases.iter().zip(seen.iter()) {
        assert_eq!(endpoint, &case.endpoint);
        assert_eq!(body, &case.request, "{}", case.name);
    }
}

#[test]
fn normalizer_failure_falls_back_to_passthrough() {
    let contract = contract();
    let (base, _) = spawn_mock(&contract.cases, Duration::ZERO);
    let norm = Normalization::Client(Box::new(HttpNormalizer::new(&base, TIMEOUT).unwrap()));

    let ok = contract
        .cases
        .iter()
        .find(|c| c.name == "normalize_ok")
        .unwrap();
    let prompt = UserPrompt::new(ok.request["text"].as_str().unwrap()).unwrap();
    let q = normalize_prompt(&prompt, &norm);
    assert_eq!(q.source, QuerySource::Normalized);
    assert_eq!(q.text, ok.response["canonical"]);

    let prompt = UserPrompt::new("model down").unwrap();
    let q = normalize_prompt(&prompt, &norm);
    assert_eq!(q.source, QuerySource::Passthrough);
    assert_eq!(q.text, "model down");
    assert!(q.warning.unwrap().contains("503"));
}

#[test]
fn unreachable_embedder_is_an_error_without_fallback() {
    // Bind then drop to get a port nothing listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let base = format!("http://127.0.0.1:{port}");
    let index = common::fixture_index();
    let prompt = UserPrompt::new("a woman bowing politely on a stage").unwrap();
    let http = HttpEmbedder::new(&base, TIMEOUT).unwrap();
    let err = retrieve(
        &prompt,
        &index,
        &Normalization::Passthrough,
        &http,
        &GateConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, RetrievalError::Embedding(_)));

    let chained = FallbackEmbedder {
        primary: http,
        fallback: HashingEmbedder,
    };
    let out = retrieve(
        &prompt,
        &index,
        &Normalization::Passthrough,
        &chained,
        &GateConfig::default(),
    )
    .unwrap();
    assert!(out.is_hit());
}

#[test]
fn slow_server_hits_client_timeout() {
    let contract = contract();
    let (base, _) = spawn_mock(&contract.cases, Duration::from_secs(3));
    let embedder = HttpEmbedder::new(&base, Duration::from_millis(300)).unwrap();
    let start = Instant::now();
    assert!(embedder.embed("two people dancing in a circle").is_err());
    assert!(start.elapsed() < Duration::from_secs(2));
}
