mod common;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use common::{docent, ingested, service, stdout_ok};
use docent_server::api::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

async fn api(data: &std::path::Path, method: &str, uri: &str, body: Option<&str>) -> Value {
    let app = router(AppState::new(service(data)));
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap()
}

fn cli_json(data: &std::path::Path, args: &[&str]) -> Value {
    serde_json::from_str(&stdout_ok(docent(data, args))).unwrap()
}

fn drop_latency(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("latency_seconds");
    v
}

#[tokio::test(flavor = "multi_thread")]
async fn cli_json_matches_api_responses() {
    let data = ingested();

    let cli = cli_json(data.path(), &["ask", "--json", "--mode", "fusion", "What is RAG?"]);
    let http = api(data.path(), "POST", "/ask", Some(r#"{"question": "What is RAG?", "mode": "fusion"}"#)).await;
    assert_eq!(drop_latency(cli), drop_latency(http));

    let cli = cli_json(data.path(), &["ask", "--json", "--k", "3", "What is RAG?"]);
    let http = api(data.path(), "POST", "/ask", Some(r#"{"question": "What is RAG?", "k": 3}"#)).await;
    assert_eq!(drop_latency(cli), drop_latency(http));

    let cli = cli_json(data.path(), &["papers", "--json"]);
    assert_eq!(cli, api(data.path(), "GET", "/papers", None).await);

    let cli = cli_json(data.path(), &["refgraph", "graphs", "--json", "--k", "1"]);
    assert_eq!(cli, api(data.path(), "GET", "/papers/graphs/refgraph?k=1", None).await);
}
