use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use masqrad_cli::service::{router, AppState, ArtifactEntry, RunStatus};
use masqrad_core::backends::{Backend, BackendError, BackendRequest, MockBackend, MockScript};
use masqrad_core::clock::FixedClock;
use masqrad_core::debate::DebateTranscript;
use masqrad_core::orchestrator::{Engine, RunStage, RunStore, Transition};
use masqrad_core::sandbox::digest_bytes;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn dataset() -> String {
    fixtures().join("movies.csv").display().to_string()
}

fn mock_engine(root: &std::path::Path) -> Engine {
    let script = MockScript::load(&fixtures().join("mock_happy.json")).unwrap();
    Engine::new(
        Arc::new(MockBackend::new(script).unwrap()),
        RunStore::open(root).unwrap(),
    )
    .with_clock(Arc::new(FixedClock::epoch()))
}

async fn serve(engine: Engine) -> (String, Arc<Engine>) {
    let engine = Arc::new(engine);
    let app = router(AppState::new(engine.clone(), 2));
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))
        .await
        .unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), engine)
}

async fn submit(client: &reqwest::Client, base: &str, query: &str) -> String {
    let resp = client
        .post(format!("{base}/v1/runs"))
        .json(&json!({ "query": query, "dataset_ref": dataset() }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 202);
    let body: Value = resp.json().await.unwrap();
    body["run_id"].as_str().unwrap().to_string()
}

async fn poll_until_terminal(client: &reqwest::Client, base: &str, id: &str) -> (RunStatus, Vec<RunStage>) {
    let mut seen = Vec::new();
    for _ in 0..600 {
        let status: RunStatus = client
            .get(format!("{base}/v1/runs/{id}"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        if seen.last() != Some(&status.stage) {
            seen.push(status.stage);
        }
        if status.stage.is_terminal() {
            return (status, seen);
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("run {id} did not finish");
}

fn parse_events(body: &str) -> Vec<Transition> {
    body.lines()
        .filter_map(|l| l.strip_prefix("data:"))
        .map(|d| serde_json::from_str(d.trim()).unwrap())
        .collect()
}

#[tokio::test]
async fn submitted_run_reaches_done_and_matches_store() {
    let dir = tempfile::tempdir().unwrap();
    let (base, engine) = serve(mock_engine(dir.path())).await;
    let client = reqwest::Client::new();
    let id = submit(&client, &base, "Which genre earns the most gross revenue?").await;
    let (status, seen) = poll_until_terminal(&client, &base, &id).await;
    assert_eq!(status.stage, RunStage::Done, "{:?}", status.failure_reason);
    assert!(seen.windows(2).all(|w| w[0] < w[1]), "{seen:?}");

    let stored = engine.store().load_run(&id).unwrap();
    assert_eq!(status, RunStatus::from(stored.clone()));

    let transcript: DebateTranscript = client
        .get(format!("{base}/v1/runs/{id}/transcript"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(Some(transcript), stored.transcript);

    let listing: Vec<ArtifactEntry> = client
        .get(format!("{base}/v1/runs/{id}/artifacts"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(listing.len(), 2);
    for entry in &listing {
        let resp = client.get(format!("{base}{}", entry.url)).send().await.unwrap();
        assert_eq!(resp.status(), 200);
        assert_eq!(resp.headers()["content-type"], entry.media_type.as_str());
        let bytes = resp.bytes().await.unwrap();
        assert_eq!(digest_bytes(&bytes), entry.artifact.digest);
    }
    let media: Vec<&str> = listing.iter().map(|e| e.media_type.as_str()).collect();
    assert_eq!(media, vec!["image/svg+xml", "text/csv"]);

    let body = client
        .get(format!("{base}/v1/runs/{id}/events"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(parse_events(&body), engine.store().read_transitions(&id).unwrap());
}

#[tokio::test]
async fn event_stream_follows_a_live_run() {
    let dir = tempfile::tempdir().unwrap();
    let script = MockScript::load(&fixtures().join("mock_happy.json"))
        .unwrap()
        .latency(Duration::from_millis(100));
    let engine = Engine::new(
        Arc::new(MockBackend::new(script).unwrap()),
        RunStore::open(dir.path()).unwrap(),
    );
    let (base, engine) = serve(engine).await;
    let client = reqwest::Client::new();
    let id = submit(&client, &base, "Which genre earns the most gross revenue?").await;
    let body = client
        .get(format!("{base}/v1/runs/{id}/events"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let events = parse_events(&body);
    let stages: Vec<RunStage> = events.iter().map(|t| t.to).collect();
    assert_eq!(stages.first(), Some(&RunStage::Interpreting));
    assert_eq!(stages.last(), Some(&RunStage::Done));
    assert_eq!(events, engine.store().read_transitions(&id).unwrap());
}

#[tokio::test]
async fn unknown_runs_and_artifacts_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _engine) = serve(mock_engine(dir.path())).await;
    let client = reqwest::Client::new();
    for path in [
        "/v1/runs/run-missing",
        "/v1/runs/run-missing/transcript",
        "/v1/runs/run-missing/artifacts",
        "/v1/runs/run-missing/events",
        "/v1/runs/..%2Fetc",
    ] {
        let resp = client.get(format!("{base}{path}")).send().await.unwrap();
        assert_eq!(resp.status(), 404, "{path}");
    }
    let id = submit(&client, &base, "Which genre earns the most gross revenue?").await;
    poll_until_terminal(&client, &base, &id).await;
    let resp = client
        .get(format!("{base}/v1/runs/{id}/artifacts/no_such_chart"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 404);
}

#[tokio::test]
async fn malformed_submissions_are_400() {
    let dir = tempfile::tempdir().unwrap();
    let (base, engine) = serve(mock_engine(dir.path())).await;
    let client = reqwest::Client::new();
    let bodies = [
        "not json".to_string(),
        json!({ "query": "q" }).to_string(),
        json!({ "query": "", "dataset_ref": dataset() }).to_string(),
        json!({ "query": "q", "dataset_ref": dataset(), "extra": 1 }).to_string(),
    ];
    for body in bodies {
        let resp = client
            .post(format!("{base}/v1/runs"))
            .header("content-type", "application/json")
            .body(body.clone())
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400, "{body}");
    }
    assert!(engine.store().list_runs().unwrap().is_empty());
}

struct DownBackend;

#[async_trait]
impl Backend for DownBackend {
    async fn complete(&self, _request: &BackendRequest) -> Result<String, BackendError> {
        Err(BackendError::BackendUnavailable("offline".into()))
    }

    async fn health(&self) -> Result<(), BackendError> {
        Err(BackendError::BackendUnavailable("offline".into()))
    }

    fn name(&self) -> &str {
        "down"
    }
}

#[tokio::test]
async fn health_reflects_backend_reachability() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = serve(mock_engine(dir.path())).await;
    let client = reqwest::Client::new();
    let resp = client.get(format!("{base}/v1/health")).send().await.unwrap();
    assert_eq!(resp.status(), 200);

    let down_dir = tempfile::tempdir().unwrap();
    let (down, engine) = serve(Engine::new(
        Arc::new(DownBackend),
        RunStore::open(down_dir.path()).unwrap(),
    ))
    .await;
    assert_eq!(
        client.get(format!("{down}/v1/health")).send().await.unwrap().status(),
        503
    );
    let resp = client
        .post(format!("{down}/v1/runs"))
        .json(&json!({ "query": "q", "dataset_ref": dataset() }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 503);
    assert!(engine.store().list_runs().unwrap().is_empty());
}

#[tokio::test]
async fn concurrent_submissions_all_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (base, engine) = serve(mock_engine(dir.path())).await;
    let client = reqwest::Client::new();
    let mut ids = Vec::new();
    for i in 0..5 {
        ids.push(
            submit(
                &client,
                &base,
                &format!("Which genre earns the most gross revenue? ({i})"),
            )
            .await,
        );
    }
    for id in &ids {
        let (status, _) = poll_until_terminal(&client, &base, id).await;
        assert_eq!(status.stage, RunStage::Done);
    }
    assert_eq!(engine.store().list_runs().unwrap().len(), 5);
}
