use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use slr_core::analytics::{series_to_csv, CooccurrenceMatrix, FrequencyTable};
use slr_core::citenet::ranking_csv;
use slr_core::corpus::{Corpus, FormatProfile};
use slr_core::evaluation::{bundles_to_csv, parse_gold_jsonl, Comparison};
use slr_core::llm::{ChatRequest, Gateway, MockProvider, ProviderConfig, Transport, TransportError};
use slr_core::workspace::Workspace;
use slr_core::{Clock, FixedClock};
use slr_service::{router, serve, serve_state, AppState, CentralityView, EvolutionView, ServiceConfig, ServiceError};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn expected(name: &str) -> String {
    fs::read_to_string(fixture("e2e/expected").join(name)).unwrap()
}

fn clock() -> FixedClock {
    FixedClock::ymd(2025, 1, 20)
}

fn workspace_with(corpus_file: &str) -> (tempfile::TempDir, Workspace) {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::create(dir.path()).unwrap();
    let mut corpus = Corpus::new();
    corpus
        .ingest_export(&fixture(corpus_file), &FormatProfile::scopus_csv(), clock().now())
        .unwrap();
    ws.save_corpus(&corpus, &clock()).unwrap();
    (dir, ws)
}

fn mock_gateway() -> Gateway {
    let mock = MockProvider::from_file(&fixture("e2e/mock_script.jsonl")).unwrap();
    Gateway::new(ProviderConfig::mock("mock"), Arc::new(mock))
}

fn app_with(transport: Option<Arc<dyn Transport>>) -> (tempfile::TempDir, Router) {
    let (dir, ws) = workspace_with("e2e/corpus.csv");
    let gateway = match transport {
        Some(t) => Gateway::new(ProviderConfig::mock("mock"), t),
        None => mock_gateway(),
    };
    let state = AppState::new(ws, Arc::new(clock())).with_gateway(gateway);
    (dir, router(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None, &[]).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(body), &[]).await
}

async fn wait_for_job(app: &Router, id: &str) -> Value {
    for _ in 0..1000 {
        let (status, job) = get(app, &format!("/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK, "{job}");
        if job["status"] != "running" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

async fn classify(app: &Router, dim: &str) -> Value {
    let (status, job) = post(app, "/jobs/classify", json!({"dimension_id": dim, "model": "mock", "repetitions": 3})).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    wait_for_job(app, job["id"].as_str().unwrap()).await
}

/// Mock responses released one permit at a time.
struct Gated {
    inner: MockProvider,
    permits: Mutex<usize>,
    ready: Condvar,
}

impl Gated {
    fn new() -> Arc<Self> {
        Arc::new(Self {
            inner: MockProvider::from_file(&fixture("e2e/mock_script.jsonl")).unwrap(),
            permits: Mutex::new(0),
            ready: Condvar::new(),
        })
    }

    fn release(&self, n: usize) {
        *self.permits.lock().unwrap() += n;
        self.ready.notify_all();
    }
}

impl Transport for Gated {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.ready.wait(permits).unwrap();
        }
        *permits -= 1;
        drop(permits);
        self.inner.send(request)
    }
}

#[tokio::test]
async fn readiness_reports_store_health() {
    let (_dir, app) = app_with(None);
    let (status, body) = get(&app, "/healthz").await;
    assert_eq!((status, body), (StatusCode::OK, json!({"status": "ok"})));
}

#[tokio::test]
async fn missing_store_root_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-store");
    let mut config = ServiceConfig::new(&missing);
    config.bind = "127.0.0.1:0".parse().unwrap();
    let err = serve(&config).await.err().expect("startup fails");
    assert!(matches!(err, ServiceError::Store(_)));
    assert!(err.to_string().contains(&missing.display().to_string()), "{err}");
}

#[tokio::test(flavor = "multi_thread")]
async fn port_in_use_is_a_bind_error() {
    let (_dir, ws) = workspace_with("three_cycle.csv");
    let state = AppState::new(ws, Arc::new(clock()));
    let first = serve_state(state.clone(), "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let err = serve_state(state, first.addr).await.err().expect("second bind fails");
    assert!(matches!(err, ServiceError::Bind { .. }), "{err}");
    first.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn job_on_mock_fixture_stores_36_assignments() {
    let (_dir, app) = app_with(None);
    let job = classify(&app, "pricing_model").await;
    assert_eq!(job["status"], "completed");
    assert_eq!(job["id"], "pricing_model__mock__v1__r3");
    assert_eq!((job["done"].as_u64(), job["total"].as_u64()), (Some(36), Some(36)));
    assert_eq!(job["progress"], 1.0);

    let (status, runs) = get(&app, "/jobs/pricing_model__mock__v1__r3/assignments").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(runs["assignments"].as_array().unwrap().len(), 36);

    // Finished jobs are consolidated, so label filters see the gate.
    let (status, page) = get(&app, "/papers?label=pricing_model:Yes&limit=100").await;
    assert_eq!(status, StatusCode::OK, "{page}");
    assert_eq!(page["total"], 9);
}

#[tokio::test]
async fn unknown_job_is_not_found() {
    let (_dir, app) = app_with(None);
    for uri in ["/jobs/nope", "/jobs/nope/assignments"] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["code"], "unknown_job");
    }
    let (status, body) = post(&app, "/jobs/nope/cancel", json!({})).await;
    assert_eq!((status, &body["code"]), (StatusCode::NOT_FOUND, &json!("unknown_job")));
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_submissions_share_one_job() {
    let gated = Gated::new();
    let (_dir, app) = app_with(Some(gated.clone()));
    let spec = json!({"dimension_id": "pricing_model", "model": "mock", "repetitions": 3});
    let (first_status, first) = post(&app, "/jobs/classify", spec.clone()).await;
    let (second_status, second) = post(&app, "/jobs/classify", spec).await;
    assert_eq!((first_status, second_status), (StatusCode::ACCEPTED, StatusCode::OK));
    assert_eq!(first["id"], second["id"]);

    // Same dimension, model and prompt version with another R is refused while running.
    let (status, body) = post(&app, "/jobs/classify", json!({"dimension_id": "pricing_model", "model": "mock", "repetitions": 2})).await;
    assert_eq!((status, &body["code"]), (StatusCode::CONFLICT, &json!("job_active")));

    gated.release(1000);
    let done = wait_for_job(&app, first["id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "completed");
    assert_eq!(done["done"], 36);
}

#[tokio::test(flavor = "multi_thread")]
async fn cancel_keeps_finished_assignments() {
    let gated = Gated::new();
    let (_dir, app) = app_with(Some(gated.clone()));
    let (_, job) = post(&app, "/jobs/classify", json!({"dimension_id": "pricing_model", "model": "mock", "repetitions": 3})).await;
    let id = job["id"].as_str().unwrap().to_string();

    gated.release(5);
    for _ in 0..1000 {
        if get(&app, &format!("/jobs/{id}")).await.1["done"] == 5 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (status, outcome) = post(&app, &format!("/jobs/{id}/cancel"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(outcome["cancelled"], true);
    // Let requests already in flight finish.
    gated.release(1000);

    let job = wait_for_job(&app, &id).await;
    assert_eq!(job["status"], "cancelled");
    let done = job["done"].as_u64().unwrap();
    assert!((5..36).contains(&done), "done={done}");

    let (_, runs) = get(&app, &format!("/jobs/{id}/assignments")).await;
    assert_eq!(runs["assignments"].as_array().unwrap().len() as u64, done);

    let (status, again) = post(&app, &format!("/jobs/{id}/cancel"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["cancelled"], false);
    assert_eq!(again["status"], "cancelled");

    // Resubmitting resumes the partial run set and completes it.
    let job = classify(&app, "pricing_model").await;
    assert_eq!((job["status"].as_str(), job["done"].as_u64()), (Some("completed"), Some(36)));
}

#[tokio::test(flavor = "multi_thread")]
async fn cancel_after_completion_is_a_reported_no_op() {
    let (_dir, app) = app_with(None);
    let job = classify(&app, "pricing_model").await;
    let (status, outcome) = post(&app, &format!("/jobs/{}/cancel", job["id"].as_str().unwrap()), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(outcome["cancelled"], false);
    assert_eq!(outcome["status"], "completed");
}

#[tokio::test(flavor = "multi_thread")]
async fn gated_dimension_before_gate_is_a_conflict() {
    let (_dir, app) = app_with(None);
    let (status, body) = post(&app, "/jobs/classify", json!({"dimension_id": "underlying", "model": "mock", "repetitions": 3})).await;
    assert_eq!((status, &body["code"]), (StatusCode::CONFLICT, &json!("gate_not_consolidated")));
    let (status, body) = post(&app, "/jobs/classify", json!({"dimension_id": "pricing_model", "model": "gpt-x", "repetitions": 3})).await;
    assert_eq!((status, &body["code"]), (StatusCode::NOT_FOUND, &json!("unknown_model")));
}

#[tokio::test]
async fn bearer_token_guards_everything_but_readiness() {
    let (_dir, ws) = workspace_with("three_cycle.csv");
    let app = router(AppState::new(ws, Arc::new(clock())).with_token(Some("s3cret".into())));
    assert_eq!(get(&app, "/healthz").await.0, StatusCode::OK);
    let (status, body) = get(&app, "/papers").await;
    assert_eq!((status, &body["code"]), (StatusCode::UNAUTHORIZED, &json!("unauthorized")));
    let wrong = call(&app, "GET", "/papers", None, &[("authorization", "Bearer nope")]).await;
    assert_eq!(wrong.0, StatusCode::UNAUTHORIZED);
    let right = call(&app, "GET", "/papers", None, &[("authorization", "Bearer s3cret")]).await;
    assert_eq!(right.0, StatusCode::OK);
    assert_eq!(right.1["total"], 3);
}

#[tokio::test]
async fn constraint_edit_retried_with_key_makes_one_version() {
    let (_dir, app) = app_with(None);
    let edit = json!({"constraints": ["Answer Yes or No only."], "editor": "ana"});
    let headers = [("idempotency-key", "edit-1")];
    let first = call(&app, "POST", "/prompts/pricing_model/constraints", Some(edit.clone()), &headers).await;
    let retry = call(&app, "POST", "/prompts/pricing_model/constraints", Some(edit.clone()), &headers).await;
    assert_eq!(first.0, StatusCode::CREATED);
    assert_eq!(first, retry);
    assert_eq!(first.1["version"], 2);

    let (_, entry) = get(&app, "/taxonomy/pricing_model").await;
    assert_eq!(entry["history"].as_array().unwrap().len(), 2);
    assert_eq!(entry["dimension"]["prompt_template"]["constraints"], json!(["Answer Yes or No only."]));

    // A new key is a new edit.
    let other = call(&app, "POST", "/prompts/pricing_model/constraints", Some(edit), &[("idempotency-key", "edit-2")]).await;
    assert_eq!(other.1["version"], 3);

    let (status, body) = post(&app, "/prompts/option_type/constraints", json!({"constraints": [], "editor": "ana"})).await;
    assert_eq!((status, &body["code"]), (StatusCode::UNPROCESSABLE_ENTITY, &json!("text_mapped")));
}

#[tokio::test]
async fn taxonomy_put_checks_the_path() {
    let (_dir, app) = app_with(None);
    let (_, entry) = get(&app, "/taxonomy/underlying").await;
    let mut dim = entry["dimension"].clone();
    let (status, _) = call(&app, "PUT", "/taxonomy/pricing_model", Some(dim.clone()), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    dim["name"] = json!("Underlying asset class");
    let (status, updated) = call(&app, "PUT", "/taxonomy/underlying", Some(dim), &[]).await;
    assert_eq!(status, StatusCode::OK, "{updated}");
    assert_eq!(get(&app, "/taxonomy/underlying").await.1, updated);
    let (status, body) = get(&app, "/taxonomy/nope").await;
    assert_eq!((status, &body["code"]), (StatusCode::NOT_FOUND, &json!("unknown_dimension")));
}

#[tokio::test]
async fn paper_query_parameters_are_validated() {
    let (_dir, app) = app_with(None);
    let (status, page) = get(&app, "/papers?keyword=barrier&limit=5").await;
    assert_eq!(status, StatusCode::OK);
    assert!(page["total"].as_u64().unwrap() >= 1);
    for bad in ["/papers?year_from=2020&year_to=2010", "/papers?limit=zero", "/papers?label=nocolon", "/papers?color=red"] {
        assert_eq!(get(&app, bad).await.0, StatusCode::BAD_REQUEST, "{bad}");
    }
    let (status, body) = get(&app, "/papers?label=underlying:Weather").await;
    assert_eq!((status, &body["code"]), (StatusCode::NOT_FOUND, &json!("unknown_label")));
}

#[tokio::test]
async fn three_cycle_pagerank_is_uniform() {
    let (_dir, ws) = workspace_with("three_cycle.csv");
    let app = router(AppState::new(ws, Arc::new(clock())));
    let (status, body) = get(&app, "/network/centrality?measure=pagerank&k=10").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let view: CentralityView = serde_json::from_value(body).unwrap();
    assert_eq!(view.ranked.len(), 3);
    for r in &view.ranked {
        assert!((r.score - 1.0 / 3.0).abs() < 1e-9, "{r:?}");
    }
    assert_eq!(view.converged, Some(true));
    let (status, _) = get(&app, "/network/centrality?measure=closeness").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, "/network/centrality?dimension=pricing_model").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

/// Drives the whole fixture through the HTTP surface and compares every
/// table the endpoints expose with the independently computed expectations.
#[tokio::test(flavor = "multi_thread")]
async fn endpoints_reproduce_expected_tables() {
    let (_dir, app) = app_with(None);
    for dim in ["pricing_model", "underlying", "option_type", "model_type"] {
        let job = classify(&app, dim).await;
        assert_eq!(job["status"], "completed", "{job}");
    }

    let gold = parse_gold_jsonl(&fs::read_to_string(fixture("e2e/gold.jsonl")).unwrap()).unwrap();
    for dim in ["pricing_model", "underlying"] {
        let records: Vec<Value> = gold
            .iter()
            .filter(|g| g.dimension_id == dim)
            .map(|g| json!({"paper_id": g.paper_id, "labels": g.labels, "annotator": g.annotator}))
            .collect();
        let n = records.len();
        let (status, body) = post(&app, &format!("/gold/{dim}"), json!({"records": records})).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        assert_eq!(body["total"], n);

        let (status, body) = get(&app, &format!("/evaluations/{dim}")).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let comparison: Comparison = serde_json::from_value(body).unwrap();
        assert_eq!(bundles_to_csv(&comparison.rows), expected(&format!("evaluation_{dim}.csv")), "{dim}");
    }

    let (_, body) = get(&app, "/analytics/frequency/underlying").await;
    let table: FrequencyTable = serde_json::from_value(body).unwrap();
    assert_eq!(table.to_csv(), expected("frequency_underlying.csv"));

    let (_, body) = get(&app, "/analytics/chord").await;
    let chord: CooccurrenceMatrix = serde_json::from_value(body).unwrap();
    assert_eq!(chord.to_csv(), expected("chord_model_type.csv"));

    let (_, body) = get(&app, "/analytics/evolution?kind=cooccurrence").await;
    let co: EvolutionView = serde_json::from_value(body).unwrap();
    assert_eq!(series_to_csv(&co.series, false), expected("cooccurrence_series_model_type.csv"));

    let (_, body) = get(&app, "/analytics/evolution?kind=citation&dimension=model_type").await;
    let cites: EvolutionView = serde_json::from_value(body).unwrap();
    assert_eq!(series_to_csv(&cites.series, true), expected("citation_series_model_type.csv"));
    assert_eq!(
        format!("skipped_edges={}\n", cites.skipped_edges.unwrap()),
        expected("citation_series_skipped_model_type.txt")
    );

    for (uri, file) in [
        ("/network/centrality?measure=pagerank&k=1000", "centrality_pagerank.csv"),
        ("/network/centrality?measure=in_degree&k=1000", "centrality_in_degree.csv"),
        ("/network/centrality?measure=betweenness&k=1000", "centrality_betweenness.csv"),
        (
            "/network/centrality?measure=pagerank&dimension=pricing_model&label=Yes&k=1000",
            "centrality_pagerank_pricing_model.csv",
        ),
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let view: CentralityView = serde_json::from_value(body).unwrap();
        assert_eq!(ranking_csv(&view.ranked), expected(file), "{uri}");
    }

    // Reads are pure views: repeating them returns the same bodies.
    for uri in ["/papers?limit=100", "/analytics/chord", "/evaluations/underlying", "/network/centrality"] {
        assert_eq!(get(&app, uri).await, get(&app, uri).await, "{uri}");
    }
    let (_, body) = get(&app, "/analytics/evolution?kind=sideways").await;
    assert_eq!(body["code"], "bad_request");
}
