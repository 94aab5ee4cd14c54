mod common;

use std::io::Write;
use std::sync::{Arc, Mutex};

use common::{config, fixture_text};
use docent_core::secret::Secret;
use docent_server::config::GeneratorKind;
use docent_server::ops::{AskRequest, OpError, Service, UploadRequest};

#[derive(Clone, Default)]
struct Captured(Arc<Mutex<Vec<u8>>>);

impl Write for Captured {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

const KEY: &str = "sk-log-scrub-4417";

#[test]
fn provider_key_never_reaches_logs_or_errors() {
    let captured = Captured::default();
    let sink = captured.clone();
    tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_writer(move || sink.clone())
        .init();

    let data = tempfile::tempdir().unwrap();
    let mut cfg = config(data.path());
    cfg.generator.kind = GeneratorKind::Http;
    cfg.generator.base_url = "http://127.0.0.1:9".into();
    cfg.generator.api_key = Some(Secret::new(KEY));
    cfg.generator.retries = 1;
    cfg.generator.timeout_secs = 2;
    tracing::info!(config = ?cfg, "starting");

    let svc = Service::from_config(&cfg).unwrap();
    svc.ingest(UploadRequest {
        label: "rag".into(),
        text: Some(fixture_text("rag.txt")),
        pages: None,
        source_uri: None,
    })
    .unwrap();
    let err = svc.ask(&AskRequest::new("What is RAG?")).unwrap_err();
    assert!(matches!(err, OpError::Upstream(_)), "{err:?}");
    assert!(!err.to_string().contains(KEY));
    assert!(!format!("{err:?}").contains(KEY));

    let logs = String::from_utf8(captured.0.lock().unwrap().clone()).unwrap();
    assert!(logs.contains("chat request failed"), "{logs}");
    assert!(logs.contains("starting"));
    assert!(!logs.contains(KEY), "{logs}");
}
