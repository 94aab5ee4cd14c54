//! Batch import of papers by URL.
//!
//! Fetches fan out with a concurrency bound; ingestion is funneled through a
//! single caller-supplied writer so corpus writes stay serialized.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{CorpusError, PAGE_SEPARATOR};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportStatus {
    Pending,
    Fetched,
    Ingested,
    Failed,
}

impl ImportStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Ingested | Self::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportEntry {
    pub url: String,
    pub status: ImportStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportManifest {
    pub entries: Vec<ImportEntry>,
}

impl ImportManifest {
    pub fn pending(urls: &[String]) -> Self {
        Self {
            entries: urls
                .iter()
                .map(|u| ImportEntry {
                    url: u.clone(),
                    status: ImportStatus::Pending,
                    error: None,
                    doc_id: None,
                })
                .collect(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(|e| e.status.is_terminal())
    }

    pub fn statuses(&self) -> Vec<ImportStatus> {
        self.entries.iter().map(|e| e.status).collect()
    }
}

/// A fetched, text-extracted paper ready for ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedDocument {
    pub label: String,
    pub source_uri: String,
    pub pages: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("http status {0}")]
    Status(u16),
    #[error("unsupported content type: {0}")]
    UnsupportedContent(String),
    #[error("transport error: {0}")]
    Transport(String),
}

pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> Result<FetchedDocument, FetchError>;
}

/// Fetches `text/*` documents over HTTP. Pages are split on form feeds.
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &Url) -> Result<FetchedDocument, FetchError> {
        let mut resp = self.agent.get(url.as_str()).call().map_err(|e| match e {
            ureq::Error::StatusCode(code) => FetchError::Status(code),
            other => FetchError::Transport(other.to_string()),
        })?;
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_ascii_lowercase();
        if !content_type.starts_with("text/plain") && !content_type.starts_with("text/markdown") {
            return Err(FetchError::UnsupportedContent(if content_type.is_empty() {
                "unknown".into()
            } else {
                content_type
            }));
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        Ok(FetchedDocument {
            label: label_from_url(url),
            source_uri: url.to_string(),
            pages: split_pages(&body),
        })
    }
}

/// Splits extracted text on form feeds into pages.
pub fn split_pages(text: &str) -> Vec<String> {
    text.split(PAGE_SEPARATOR).map(str::to_string).collect()
}

/// Last non-empty path segment without its extension, or the host.
pub fn label_from_url(url: &Url) -> String {
    let segment = url
        .path_segments()
        .and_then(|mut segs| segs.rfind(|s| !s.is_empty()).map(str::to_string));
    match segment {
        Some(seg) => match seg.rsplit_once('.') {
            Some((stem, ext)) if !stem.is_empty() && ext.len() <= 4 => stem.to_string(),
            _ => seg,
        },
        None => url.host_str().unwrap_or("document").to_string(),
    }
}

/// Fetches every URL (at most `bound` in flight) and hands each fetched
/// document to `ingest` in input order. Per-URL failures are recorded in the
/// manifest and never abort the batch.
pub fn batch_import<F, E>(
    urls: &[String],
    fetcher: &dyn Fetcher,
    bound: usize,
    ingest: F,
) -> Result<ImportManifest, CorpusError>
where
    F: FnMut(FetchedDocument) -> Result<String, E>,
    E: std::fmt::Display,
{
    batch_import_observed(urls, fetcher, bound, ingest, |_| {})
}

/// [`batch_import`] that reports the manifest after the fetch phase and
/// after each ingestion.
pub fn batch_import_observed<F, E, O>(
    urls: &[String],
    fetcher: &dyn Fetcher,
    bound: usize,
    mut ingest: F,
    mut observe: O,
) -> Result<ImportManifest, CorpusError>
where
    F: FnMut(FetchedDocument) -> Result<String, E>,
    E: std::fmt::Display,
    O: FnMut(&ImportManifest),
{
    if urls.is_empty() {
        return Err(CorpusError::EmptyUrlList);
    }
    let mut manifest = ImportManifest::pending(urls);
    let fetched = parallel::bounded_map(urls, bound, |raw| {
        let url = Url::parse(raw.trim()).map_err(|e| format!("invalid url: {e}"))?;
        fetcher.fetch(&url).map_err(|e| e.to_string())
    });
    let mut docs = Vec::with_capacity(fetched.len());
    for (entry, outcome) in manifest.entries.iter_mut().zip(fetched) {
        match outcome {
            Ok(doc) => {
                entry.status = ImportStatus::Fetched;
                docs.push(Some(doc));
            }
            Err(message) => {
                tracing::warn!(url = %entry.url, %message, "import failed");
                entry.status = ImportStatus::Failed;
                entry.error = Some(message);
                docs.push(None);
            }
        }
    }
    observe(&manifest);
    for (i, doc) in docs.into_iter().enumerate() {
        let Some(doc) = doc else { continue };
        let entry = &mut manifest.entries[i];
        match ingest(doc) {
            Ok(id) => {
                entry.status = ImportStatus::Ingested;
                entry.doc_id = Some(id);
            }
            Err(e) => {
                entry.status = ImportStatus::Failed;
                entry.error = Some(e.to_string());
            }
        }
        observe(&manifest);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct MapFetcher;

    impl Fetcher for MapFetcher {
        fn fetch(&self, url: &Url) -> Result<FetchedDocument, FetchError> {
            if url.path().contains("missing") {
                return Err(FetchError::Status(404));
            }
            Ok(FetchedDocument {
                label: label_from_url(url),
                source_uri: url.to_string(),
                pages: vec!["body".into()],
            })
        }
    }

    #[test]
    fn observer_sees_each_transition() {
        let urls: Vec<String> = ["http://h/a.txt", "http://h/missing.txt", "http://h/b.txt"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut seen = Vec::new();
        let manifest = batch_import_observed(
            &urls,
            &MapFetcher,
            2,
            |d| Ok::<_, CorpusError>(d.label),
            |m| seen.push(m.statuses()),
        )
        .unwrap();
        use ImportStatus::*;
        assert_eq!(
            seen,
            vec![
                vec![Fetched, Failed, Fetched],
                vec![Ingested, Failed, Fetched],
                vec![Ingested, Failed, Ingested],
            ]
        );
        assert_eq!(manifest.statuses(), seen[2]);
    }

    #[test]
    fn empty_list_rejected() {
        let err = batch_import(&[], &MapFetcher, 4, |_| Ok::<_, CorpusError>("x".into())).unwrap_err();
        assert_eq!(err.to_string(), "empty url list");
    }

    #[test]
    fn failures_are_isolated() {
        let urls = vec![
            "http://h/a.txt".to_string(),
            "http://h/missing.txt".to_string(),
            "not a url".to_string(),
        ];
        let mut seen = Vec::new();
        let m = batch_import(&urls, &MapFetcher, 2, |d| {
            seen.push(d.label.clone());
            Ok::<_, CorpusError>(format!("id-{}", d.label))
        })
        .unwrap();
        assert_eq!(
            m.statuses(),
            vec![ImportStatus::Ingested, ImportStatus::Failed, ImportStatus::Failed]
        );
        assert_eq!(m.entries[0].doc_id.as_deref(), Some("id-a"));
        assert!(m.entries[1].error.as_deref().unwrap().contains("404"));
        assert!(m.entries[2].error.as_deref().unwrap().starts_with("invalid url"));
        assert!(m.is_complete());
        assert_eq!(seen, vec!["a"]);
    }

    #[test]
    fn ingest_error_marks_entry_failed() {
        let urls = vec!["http://h/a.txt".to_string()];
        let m = batch_import(&urls, &MapFetcher, 1, |d| {
            Err(CorpusError::DuplicateLabel(d.label))
        })
        .unwrap();
        assert_eq!(m.entries[0].status, ImportStatus::Failed);
        assert_eq!(m.entries[0].error.as_deref(), Some("duplicate label: a"));
    }

    #[test]
    fn labels_from_urls() {
        let u = |s: &str| label_from_url(&Url::parse(s).unwrap());
        assert_eq!(u("https://preprints.example.org/pdf/1234.56789v2.txt"), "1234.56789v2");
        assert_eq!(u("https://example.org/papers/attention/"), "attention");
        assert_eq!(u("https://example.org/"), "example.org");
    }
}
