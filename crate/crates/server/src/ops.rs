//! Request and response types plus the operations behind them. The HTTP
//! handlers and the CLI both go through [`Service`], so every CLI output is
//! a rendering of the same response value the API returns.

use std::sync::Arc;
use std::time::Duration;

use docent_core::agent::{AgentError, SearchMode};
use docent_core::corpus::{
    split_pages, CorpusError, DocumentInput, DocumentSummary, Fetcher, HttpFetcher, ImportEntry,
    ImportManifest, ImportStatus,
};
use docent_core::eval::EvalError;
use docent_core::refgraph::{RefGraphError, RefGraphOutput};
use docent_core::retrieval::RetrievalError;
use docent_core::{Citation, Engine, EngineError};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ServiceConfig};

/// Failure classes shared by the API (status codes) and the CLI (messages).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OpError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("provider unavailable: {0}")]
    Upstream(String),
    #[error("{0}")]
    Internal(String),
}

pub const RETRY_HINT: &str = "the model provider is unavailable; retry the request later";

fn bad_retrieval(e: &RetrievalError) -> bool {
    matches!(
        e,
        RetrievalError::EmptyQuery
            | RetrievalError::ZeroVariants
            | RetrievalError::BadRrfConstant
            | RetrievalError::InvalidConfig(_)
    )
}

impl From<EngineError> for OpError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        if e.is_upstream() {
            return Self::Upstream(msg);
        }
        match &e {
            EngineError::EmptyCorpus => Self::Conflict(msg),
            EngineError::Corpus(CorpusError::UnknownDocument(_))
            | EngineError::RefGraph(RefGraphError::UnknownDocument(_)) => Self::NotFound(msg),
            EngineError::RefGraph(RefGraphError::NoReferences(_)) => Self::Unprocessable(msg),
            EngineError::RefGraph(RefGraphError::ZeroK)
            | EngineError::Corpus(
                CorpusError::EmptyDocument
                | CorpusError::DuplicateLabel(_)
                | CorpusError::EmptyLabel
                | CorpusError::EmptyUrlList
                | CorpusError::InvalidConfig(_),
            )
            | EngineError::Agent(AgentError::InvalidConfig(_))
            | EngineError::Eval(
                EvalError::UnknownMethod(_)
                | EvalError::NoItems
                | EvalError::NoMethods
                | EvalError::TooFewBackends
                | EvalError::MissingFinetunedModel(_)
                | EvalError::Gold { .. },
            ) => Self::BadRequest(msg),
            EngineError::Retrieval(r) | EngineError::Agent(AgentError::Retrieval(r)) if bad_retrieval(r) => {
                Self::BadRequest(msg)
            }
            _ => Self::Internal(msg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
    /// `basic` (default) or `fusion`.
    #[serde(default)]
    pub mode: Option<String>,
    /// `base` (default) or `finetuned`.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    /// Number of fusion query variants.
    #[serde(default)]
    pub variants: Option<usize>,
}

impl AskRequest {
    pub fn new(question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            mode: None,
            model: None,
            k: None,
            variants: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceView {
    pub chunk_id: String,
    pub summary: String,
    pub score: f64,
    pub citation: Citation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: String,
    pub complete: bool,
    pub grounded: bool,
    pub citations: Vec<Citation>,
    pub evidence: Vec<EvidenceView>,
    pub iterations: usize,
    pub warnings: Vec<String>,
    pub latency_seconds: f64,
}

/// A single document sent inline: page texts, or one text split on form feeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadRequest {
    pub label: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub pages: Option<Vec<String>>,
    #[serde(default)]
    pub source_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportRequest {
    pub urls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub manifest: ImportManifest,
    pub document: DocumentSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PapersResponse {
    pub papers: Vec<DocumentSummary>,
}

/// Engine plus the per-deployment knobs requests can select between.
#[derive(Clone)]
pub struct Service {
    pub engine: Arc<Engine>,
    pub fetcher: Arc<dyn Fetcher>,
    pub finetuned_model: Option<String>,
}

impl Service {
    pub fn new(engine: Arc<Engine>, fetcher: Arc<dyn Fetcher>, finetuned_model: Option<String>) -> Self {
        Self {
            engine,
            fetcher,
            finetuned_model,
        }
    }

    /// Opens the engine described by `cfg` with an HTTP fetcher for imports.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ConfigError> {
        Ok(Self::new(
            Arc::new(cfg.open_engine()?),
            Arc::new(HttpFetcher::new(Duration::from_secs(cfg.fetch_timeout_secs))),
            cfg.generator.finetuned_model.clone(),
        ))
    }

    pub fn papers(&self) -> PapersResponse {
        PapersResponse {
            papers: self.engine.summaries(),
        }
    }

    pub fn ask(&self, req: &AskRequest) -> Result<AskResponse, OpError> {
        if req.question.trim().is_empty() {
            return Err(OpError::BadRequest("question must not be empty".into()));
        }
        let mut cfg = self.engine.settings().agent.clone();
        if let Some(mode) = &req.mode {
            cfg.mode = mode.parse::<SearchMode>().map_err(OpError::BadRequest)?;
        }
        if let Some(k) = req.k {
            if k == 0 {
                return Err(OpError::BadRequest("k must be at least 1".into()));
            }
            cfg.retrieval.k = k;
            cfg.retrieval.per_list_depth = cfg.retrieval.per_list_depth.max(k);
        }
        if let Some(n) = req.variants {
            if n == 0 {
                return Err(OpError::BadRequest("variants must be at least 1".into()));
            }
            cfg.retrieval.n_variants = n;
        }
        let model = match req.model.as_deref().map(str::to_ascii_lowercase).as_deref() {
            None | Some("base") => None,
            Some("finetuned") => Some(
                self.finetuned_model
                    .as_deref()
                    .ok_or_else(|| OpError::BadRequest("no fine-tuned model is configured".into()))?,
            ),
            Some(other) => {
                return Err(OpError::BadRequest(format!(
                    "unknown model {other:?} (expected base or finetuned)"
                )))
            }
        };
        let started = std::time::Instant::now();
        let answer = self.engine.ask_with_model(&req.question, &cfg, model)?;
        let latency_seconds = started.elapsed().as_secs_f64();
        Ok(AskResponse {
            answer: answer.text,
            complete: answer.complete,
            grounded: answer.grounded,
            citations: answer.citations,
            evidence: answer
                .evidence_used
                .into_iter()
                .map(|e| EvidenceView {
                    chunk_id: e.chunk_id,
                    summary: e.summary,
                    score: e.relevance_score,
                    citation: e.citation,
                })
                .collect(),
            iterations: answer.iterations,
            warnings: answer.warnings,
            latency_seconds,
        })
    }

    pub fn ingest(&self, req: UploadRequest) -> Result<IngestResponse, OpError> {
        let pages = match (req.pages, req.text) {
            (Some(pages), None) => pages,
            (None, Some(text)) => split_pages(&text),
            _ => return Err(OpError::BadRequest("provide exactly one of text or pages".into())),
        };
        let source_uri = req.source_uri.unwrap_or_else(|| format!("upload:{}", req.label));
        let document = self.engine.ingest(DocumentInput {
            label: req.label,
            source_uri: source_uri.clone(),
            pages,
            references_text: None,
        })?;
        Ok(IngestResponse {
            manifest: ImportManifest {
                entries: vec![ImportEntry {
                    url: source_uri,
                    status: ImportStatus::Ingested,
                    error: None,
                    doc_id: Some(document.id.clone()),
                }],
            },
            document,
        })
    }

    /// Fetches and ingests every URL, reporting the manifest as it changes.
    pub fn import(
        &self,
        urls: &[String],
        observe: impl FnMut(&ImportManifest),
    ) -> Result<ImportManifest, OpError> {
        if urls.is_empty() {
            return Err(OpError::BadRequest("empty url list".into()));
        }
        Ok(self
            .engine
            .batch_import_observed(urls, self.fetcher.as_ref(), observe)?)
    }

    pub fn refgraph(&self, doc: &str, k: Option<usize>) -> Result<RefGraphOutput, OpError> {
        if self.engine.corpus().resolve(doc).is_none() {
            return Err(OpError::NotFound(format!("unknown document {doc}")));
        }
        Ok(self.engine.refgraph(doc, k)?)
    }
}
