use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use masqrad_core::backends::{Backend, BackendError, BackendRequest, RemoteBackend, RemoteConfig, Stage};

type Requests = Arc<Mutex<Vec<(Option<String>, Value)>>>;

/// Provider stub that throttles the first `throttle` calls.
#[derive(Clone, Default)]
struct Provider {
    calls: Arc<AtomicUsize>,
    throttle: usize,
    status: Option<u16>,
    seen: Requests,
}

async fn chat(State(p): State<Provider>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = p.calls.fetch_add(1, Ordering::SeqCst);
    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
    p.seen.lock().unwrap().push((auth, body.clone()));
    if let Some(code) = p.status {
        return (StatusCode::from_u16(code).unwrap(), "provider exploded").into_response();
    }
    if n < p.throttle {
        return (StatusCode::TOO_MANY_REQUESTS, [("retry-after", "0.05")], "slow down").into_response();
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    Json(json!({ "choices": [{ "message": { "role": "assistant", "content": format!("echo: {prompt}") } }] }))
        .into_response()
}

async fn start(provider: Provider) -> String {
    let app = Router::new().route("/v1/chat", post(chat)).with_state(provider);
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))
        .await
        .unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1/chat")
}

fn backend(endpoint: String, attempts: u32) -> RemoteBackend {
    let mut config = RemoteConfig::new(endpoint, "test-model");
    config.max_attempts = attempts;
    config.backoff_ms = 10;
    RemoteBackend::new(config, Some("sk-test".into())).unwrap()
}

#[tokio::test]
async fn completes_and_sends_model_prompt_and_key() {
    let provider = Provider::default();
    let endpoint = start(provider.clone()).await;
    let reply = backend(endpoint, 3)
        .complete(&BackendRequest::new(Stage::Actor, "plot gross by genre"))
        .await
        .unwrap();
    assert_eq!(reply, "echo: plot gross by genre");
    let seen = provider.seen.lock().unwrap();
    let (auth, body) = &seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(body["model"], "test-model");
    assert!(body["temperature"].is_number() && body["max_tokens"].is_number());
}

#[tokio::test]
async fn throttling_is_retried_with_backoff() {
    let provider = Provider {
        throttle: 2,
        ..Provider::default()
    };
    let endpoint = start(provider.clone()).await;
    let started = Instant::now();
    let reply = backend(endpoint, 3)
        .complete(&BackendRequest::new(Stage::Critic, "review"))
        .await
        .unwrap();
    assert_eq!(reply, "echo: review");
    assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    assert!(started.elapsed() >= Duration::from_millis(100));
}

#[tokio::test]
async fn throttling_past_the_attempt_budget_surfaces() {
    let provider = Provider {
        throttle: 10,
        ..Provider::default()
    };
    let endpoint = start(provider.clone()).await;
    let err = backend(endpoint, 2)
        .complete(&BackendRequest::new(Stage::Actor, "x"))
        .await
        .unwrap_err();
    assert!(
        matches!(err, BackendError::RateLimited { retry_after: Some(_) }),
        "{err:?}"
    );
    assert_eq!(provider.calls.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn server_errors_are_not_retried() {
    let provider = Provider {
        status: Some(500),
        ..Provider::default()
    };
    let endpoint = start(provider.clone()).await;
    let err = backend(endpoint, 3)
        .complete(&BackendRequest::new(Stage::Actor, "x"))
        .await
        .unwrap_err();
    assert!(
        matches!(err, BackendError::BackendUnavailable(ref m) if m.contains("500")),
        "{err:?}"
    );
    assert_eq!(provider.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn health_tracks_reachability() {
    let endpoint = start(Provider::default()).await;
    backend(endpoint, 1).health().await.unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let closed = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    drop(listener);
    let err = backend(closed, 1).health().await.unwrap_err();
    assert!(matches!(err, BackendError::BackendUnavailable(_)));
}

#[test]
fn zero_attempts_is_rejected() {
    let mut config = RemoteConfig::new("http://127.0.0.1:1", "m");
    config.max_attempts = 0;
    assert!(matches!(
        RemoteBackend::new(config, None),
        Err(BackendError::InvalidRequest(_))
    ));
}
