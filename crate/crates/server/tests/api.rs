mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::routing::get;
use axum::Router;
use common::{config, fixture_text, service};
use docent_core::refgraph::parse_mermaid;
use docent_core::secret::Secret;
use docent_server::api::{router, AppState};
use docent_server::config::GeneratorKind;
use docent_server::ops::{Service, RETRY_HINT};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    retry_after: Option<String>,
    body: Value,
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let retry_after = resp
        .headers()
        .get(header::RETRY_AFTER)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    Reply { status, retry_after, body }
}

fn app(svc: Service) -> Router {
    router(AppState::new(svc))
}

async fn upload(app: &Router, label: &str, file: &str) -> Reply {
    let body = json!({"label": label, "text": fixture_text(file)}).to_string();
    call(app, "POST", "/papers", Some(&body)).await
}

async fn loaded(data: &std::path::Path) -> Router {
    let app = app(service(data));
    for (label, file) in [("rag", "rag.txt"), ("fusion", "fusion.md"), ("graphs", "graphs.txt")] {
        assert_eq!(upload(&app, label, file).await.status, StatusCode::CREATED);
    }
    app
}

fn without_latency(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("latency_seconds");
    v
}

#[tokio::test(flavor = "multi_thread")]
async fn health_and_upload() {
    let data = tempfile::tempdir().unwrap();
    let app = app(service(data.path()));
    let r = call(&app, "GET", "/healthz", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, json!({"status": "ok", "papers": 0}));

    let r = upload(&app, "rag", "rag.txt").await;
    assert_eq!(r.status, StatusCode::CREATED);
    let entries = r.body["manifest"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["status"], "ingested");
    assert_eq!(r.body["document"]["label"], "rag");
    assert_eq!(r.body["document"]["pages"], 2);

    let r = call(&app, "GET", "/papers", None).await;
    assert_eq!(r.body["papers"].as_array().unwrap().len(), 1);
    let r = call(&app, "GET", "/healthz", None).await;
    assert_eq!(r.body["papers"], 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_requests_are_client_errors() {
    let data = tempfile::tempdir().unwrap();
    let app = app(service(data.path()));
    let r = call(&app, "POST", "/papers", Some(r#"{"urls": []}"#)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.body["error"], "empty url list");

    let r = call(&app, "POST", "/papers", Some("{not json")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.body["error"].as_str().unwrap().starts_with("malformed body"));

    let r = call(&app, "POST", "/papers", Some(r#"{"label": "x"}"#)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = call(&app, "POST", "/ask", Some(r#"{"question": "q", "colour": "red"}"#)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = call(&app, "GET", "/imports/job-99", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn asking_before_ingest_conflicts() {
    let data = tempfile::tempdir().unwrap();
    let app = app(service(data.path()));
    let r = call(&app, "POST", "/ask", Some(r#"{"question": "What is RAG?"}"#)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert!(r.body["error"].as_str().unwrap().contains("no papers ingested"));
}

#[tokio::test(flavor = "multi_thread")]
async fn ask_is_deterministic_and_validated() {
    let data = tempfile::tempdir().unwrap();
    let app = loaded(data.path()).await;
    let body = r#"{"question": "What is RAG?", "mode": "fusion"}"#;
    let a = call(&app, "POST", "/ask", Some(body)).await;
    let b = call(&app, "POST", "/ask", Some(body)).await;
    assert_eq!(a.status, StatusCode::OK);
    assert!(a.body["latency_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(without_latency(a.body.clone()), without_latency(b.body));
    assert_eq!(a.body["grounded"], true);
    assert_eq!(a.body["citations"][0], json!({"doc_label": "rag", "page": 1}));

    let tuned = call(
        &app,
        "POST",
        "/ask",
        Some(r#"{"question": "What is RAG?", "mode": "fusion", "model": "finetuned"}"#),
    )
    .await;
    assert_eq!(tuned.status, StatusCode::OK);
    assert_ne!(tuned.body["answer"], a.body["answer"]);

    for bad in [
        r#"{"question": "   "}"#,
        r#"{"question": "q", "mode": "psychic"}"#,
        r#"{"question": "q", "k": 0}"#,
        r#"{"question": "q", "variants": 0}"#,
        r#"{"question": "q", "model": "other"}"#,
    ] {
        let r = call(&app, "POST", "/ask", Some(bad)).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{bad}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn refgraph_endpoint() {
    let data = tempfile::tempdir().unwrap();
    let app = loaded(data.path()).await;
    let r = call(&app, "GET", "/papers/graphs/refgraph", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let chart = parse_mermaid(r.body["mermaid"].as_str().unwrap()).unwrap();
    assert_eq!(chart.nodes.len(), 3);
    assert_eq!(chart.edges.len(), 2);

    let r = call(&app, "GET", "/papers/graphs/refgraph?k=1", None).await;
    let chart = parse_mermaid(r.body["mermaid"].as_str().unwrap()).unwrap();
    assert_eq!((chart.nodes.len(), chart.edges.len()), (2, 1));

    let r = call(&app, "GET", "/papers/missing/refgraph", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    for q in ["k=0", "k=abc"] {
        let r = call(&app, "GET", &format!("/papers/graphs/refgraph?{q}"), None).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{q}");
    }
    let r = call(&app, "GET", "/papers/rag/refgraph", None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_generator_is_a_retryable_gateway_error() {
    let data = tempfile::tempdir().unwrap();
    let mut cfg = config(data.path());
    cfg.generator.kind = GeneratorKind::Http;
    cfg.generator.base_url = "http://127.0.0.1:9".into();
    cfg.generator.api_key = Some(Secret::new("sk-never-printed-7731"));
    cfg.generator.timeout_secs = 2;
    cfg.generator.retries = 0;
    let app = app(Service::from_config(&cfg).unwrap());
    assert_eq!(upload(&app, "rag", "rag.txt").await.status, StatusCode::CREATED);

    let r = call(&app, "POST", "/ask", Some(r#"{"question": "What is RAG?"}"#)).await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    assert_eq!(r.retry_after.as_deref(), Some("5"));
    assert_eq!(r.body["retryable"], true);
    assert_eq!(r.body["hint"], RETRY_HINT);
    assert!(!r.body.to_string().contains("sk-never-printed-7731"));
}

fn fixture_server() -> Router {
    Router::new()
        .route("/a.txt", get(|| async { fixture_text("rag.txt") }))
        .route("/b.txt", get(|| async { fixture_text("fusion.md") }))
}

async fn start_fixture_server() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, fixture_server()).await.unwrap() });
    format!("http://{addr}")
}

fn statuses(body: &Value) -> Vec<String> {
    body["manifest"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["status"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn url_import_waits_for_completion() {
    let base = start_fixture_server().await;
    let data = tempfile::tempdir().unwrap();
    let app = app(service(data.path()));
    let urls = json!({"urls": [format!("{base}/a.txt"), format!("{base}/missing.txt"), format!("{base}/b.txt")]});
    let r = call(&app, "POST", "/papers?wait=true", Some(&urls.to_string())).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["complete"], true);
    assert_eq!(statuses(&r.body), ["ingested", "failed", "ingested"]);
    assert!(r.body["manifest"]["entries"][1]["error"].as_str().unwrap().contains("404"));

    let papers = call(&app, "GET", "/papers", None).await;
    let labels: Vec<&str> = papers.body["papers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels.len(), 2);
    assert!(labels.contains(&"a") && labels.contains(&"b"), "{labels:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn url_import_can_be_polled() {
    let base = start_fixture_server().await;
    let data = tempfile::tempdir().unwrap();
    let app = app(service(data.path()));
    let urls = json!({"urls": [format!("{base}/a.txt"), format!("{base}/missing.txt"), format!("{base}/b.txt")]});
    let r = call(&app, "POST", "/papers", Some(&urls.to_string())).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let job = r.body["job_id"].as_str().unwrap().to_string();

    let mut last = Value::Null;
    for _ in 0..200 {
        let r = call(&app, "GET", &format!("/imports/{job}"), None).await;
        assert_eq!(r.status, StatusCode::OK);
        last = r.body;
        if last["complete"] == true {
            break;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    assert_eq!(last["complete"], true, "job never finished: {last}");
    assert_eq!(statuses(&last), ["ingested", "failed", "ingested"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_asks_share_one_engine() {
    let data = tempfile::tempdir().unwrap();
    let app = Arc::new(loaded(data.path()).await);
    let mut tasks = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            call(&app, "POST", "/ask", Some(r#"{"question": "What is RAG?", "mode": "fusion"}"#)).await
        }));
    }
    let mut bodies = Vec::new();
    for t in tasks {
        let r = t.await.unwrap();
        assert_eq!(r.status, StatusCode::OK);
        bodies.push(without_latency(r.body));
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
