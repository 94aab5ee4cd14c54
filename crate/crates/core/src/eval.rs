//! Precision, recall, F1 and latency over labeled questions, and comparison
//! tables across retrieval methods and index backends.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{tool_answer, AgentContext, AgentError, Citation, Evidence};
use crate::corpus::Corpus;
use crate::embed::Embedder;
use crate::generator::GenerationHandle;
use crate::index::{copy_into, open_backend, BackendOptions, IndexError, VectorStore};
use crate::parallel;
use crate::retrieval::{Query, RetrievalConfig, RetrievalError, Retriever};

pub const TABLE_HEADER: &str = "Methods | F1 (%) | Latency (s)";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold set must not be empty")]
    EmptyGold,
    #[error("metric out of range: {0}")]
    OutOfRange(f64),
    #[error("unknown method {0:?} (expected rag, fusion or fusion+ft)")]
    UnknownMethod(String),
    #[error("no evaluation items")]
    NoItems,
    #[error("no methods given")]
    NoMethods,
    #[error("need ≥2 backends")]
    TooFewBackends,
    #[error("method {0} needs a fine-tuned model id")]
    MissingFinetunedModel(String),
    #[error("gold file line {line}: {message}")]
    Gold { line: usize, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// `|retrieved ∩ gold| / |retrieved|`, 0 for an empty retrieval.
pub fn compute_precision(retrieved: &[String], gold: &BTreeSet<String>) -> f64 {
    let unique: BTreeSet<&String> = retrieved.iter().collect();
    if unique.is_empty() {
        return 0.0;
    }
    unique.iter().filter(|id| gold.contains(id.as_str())).count() as f64 / unique.len() as f64
}

/// `|retrieved ∩ gold| / |gold|`.
pub fn compute_recall(retrieved: &[String], gold: &BTreeSet<String>) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let unique: BTreeSet<&String> = retrieved.iter().collect();
    Ok(unique.iter().filter(|id| gold.contains(id.as_str())).count() as f64 / gold.len() as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn compute_f1(precision: f64, recall: f64) -> Result<f64, EvalError> {
    for v in [precision, recall] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::OutOfRange(v));
        }
    }
    let sum = precision + recall;
    Ok(if sum > 0.0 { 2.0 * precision * recall / sum } else { 0.0 })
}

/// Runs `f` and returns its result with the elapsed wall-clock seconds.
pub fn measure_latency<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

pub fn mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        0.0
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question: Query,
    pub gold_chunk_ids: BTreeSet<String>,
}

impl EvalItem {
    pub fn new(question: &str, gold: impl IntoIterator<Item = impl Into<String>>) -> Result<Self, EvalError> {
        let gold_chunk_ids: BTreeSet<String> = gold.into_iter().map(Into::into).collect();
        if gold_chunk_ids.is_empty() {
            return Err(EvalError::EmptyGold);
        }
        Ok(Self {
            question: Query::new(question)?,
            gold_chunk_ids,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldLine {
    question: String,
    gold_chunk_ids: Vec<String>,
}

/// Parses a gold file: one `{"question", "gold_chunk_ids"}` object per line.
/// Blank lines are skipped. With a corpus, every gold id must exist in it.
pub fn parse_gold(text: &str, corpus: Option<&Corpus>) -> Result<Vec<EvalItem>, EvalError> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Gold { line: i + 1, message };
        let g: GoldLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let item = EvalItem::new(&g.question, g.gold_chunk_ids).map_err(|e| err(e.to_string()))?;
        if let Some(c) = corpus {
            if let Some(missing) = item.gold_chunk_ids.iter().find(|id| c.chunk(id).is_none()) {
                return Err(err(format!("unknown chunk id {missing}")));
            }
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    Ok(items)
}

pub fn load_gold(path: &Path, corpus: Option<&Corpus>) -> Result<Vec<EvalItem>, EvalError> {
    parse_gold(&std::fs::read_to_string(path)?, corpus)
}

pub fn gold_line(item: &EvalItem) -> String {
    serde_json::json!({
        "question": item.question.text(),
        "gold_chunk_ids": item.gold_chunk_ids,
    })
    .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rag")]
    Rag,
    #[serde(rename = "fusion")]
    Fusion,
    /// Fusion retrieval with the fine-tuned generator model.
    #[serde(rename = "fusion+ft")]
    FusionFinetuned,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rag, Method::Fusion, Method::FusionFinetuned];

    pub fn key(self) -> &'static str {
        match self {
            Self::Rag => "rag",
            Self::Fusion => "fusion",
            Self::FusionFinetuned => "fusion+ft",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Rag => "RAG",
            Self::Fusion => "RAG Fusion",
            Self::FusionFinetuned => "RAG Fusion + RAFT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl std::str::FromStr for Method {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        let t = s.trim();
        Method::ALL
            .into_iter()
            .find(|m| t.eq_ignore_ascii_case(m.key()) || t.eq_ignore_ascii_case(m.display_name()))
            .ok_or_else(|| EvalError::UnknownMethod(t.to_string()))
    }
}

pub fn parse_methods<S: AsRef<str>>(names: &[S]) -> Result<Vec<Method>, EvalError> {
    if names.is_empty() {
        return Err(EvalError::NoMethods);
    }
    names.iter().map(|n| n.as_ref().parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub retrieval: RetrievalConfig,
    /// Draft an answer from the retrieved chunks so latency covers generation.
    pub generate_answers: bool,
    pub answer_tokens: u32,
    pub finetuned_model: Option<String>,
    /// Evaluate items concurrently; latency is then not reported.
    pub parallel: bool,
    pub concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            generate_answers: true,
            answer_tokens: 500,
            finetuned_model: None,
            parallel: false,
            concurrency: parallel::DEFAULT_CONCURRENCY,
        }
    }
}

#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub corpus: &'a Corpus,
    pub store: &'a dyn VectorStore,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a GenerationHandle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub method: Method,
    pub question: String,
    pub retrieved: Vec<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub latency_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub method_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1_percent: f64,
    pub latency_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub caption: String,
    pub rows: Vec<ReportRow>,
    pub items: Vec<ItemResult>,
}

impl EvalReport {
    /// Plain-text table: header, separator, one row per method.
    pub fn table(&self) -> String {
        let mut out = format!("{TABLE_HEADER}\n--- | --- | ---\n");
        for r in &self.rows {
            let latency = r
                .latency_seconds
                .map_or_else(|| "-".to_string(), |l| format!("{l:.1}"));
            out.push_str(&format!("{} | {:.2} | {latency}\n", r.method_name, r.f1_percent));
        }
        out
    }

    /// Copy with every latency field cleared, for byte comparisons.
    pub fn without_latency(&self) -> Self {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|x| x.latency_seconds = None);
        r.items.iter_mut().for_each(|x| x.latency_seconds = None);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn f1_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.f1_percent).collect()
    }
}

fn method_handle(method: Method, llm: &GenerationHandle, cfg: &EvalConfig) -> Result<GenerationHandle, EvalError> {
    Ok(match method {
        Method::FusionFinetuned => {
            let model = cfg
                .finetuned_model
                .as_deref()
                .ok_or_else(|| EvalError::MissingFinetunedModel(method.key().into()))?;
            llm.with_model(model)
        }
        _ => llm.clone(),
    })
}

/// Retrieves with `method`, optionally drafts an answer, and returns the
/// retrieved chunk ids.
pub fn run_method(
    ctx: &EvalContext<'_>,
    method: Method,
    llm: &GenerationHandle,
    q: &Query,
    cfg: &EvalConfig,
) -> Result<Vec<String>, EvalError> {
    let retriever = Retriever::new(ctx.store, ctx.embedder);
    let ids = match method {
        Method::Rag => retriever.retrieve_basic(q, &cfg.retrieval)?.chunk_ids(),
        Method::Fusion | Method::FusionFinetuned => {
            retriever.retrieve_fusion(q, &cfg.retrieval, llm)?.fused.chunk_ids()
        }
    };
    if cfg.generate_answers {
        let evidence: Vec<Evidence> = ids
            .iter()
            .filter_map(|id| {
                let chunk = ctx.corpus.chunk(id)?;
                let doc = ctx.corpus.document(&chunk.doc_id)?;
                Some(Evidence {
                    chunk_id: id.clone(),
                    question: q.clone(),
                    summary: chunk.text.clone(),
                    relevance_score: 1.0,
                    citation: Citation {
                        doc_label: doc.label.clone(),
                        page: chunk.page,
                    },
                })
            })
            .collect();
        let agent_ctx = AgentContext {
            corpus: ctx.corpus,
            retriever,
            llm,
        };
        tool_answer(&agent_ctx, q, &evidence, cfg.answer_tokens)?;
    }
    Ok(ids)
}

fn score_item(method: Method, item: &EvalItem, retrieved: Vec<String>, latency: Option<f64>) -> Result<ItemResult, EvalError> {
    let precision = compute_precision(&retrieved, &item.gold_chunk_ids);
    let recall = compute_recall(&retrieved, &item.gold_chunk_ids)?;
    Ok(ItemResult {
        method,
        question: item.question.text().to_string(),
        retrieved,
        precision,
        recall,
        f1: compute_f1(precision, recall)?,
        latency_seconds: latency,
    })
}

/// Evaluates every method over every item. Rows follow the order of
/// `methods`; F1 is the mean of per-item F1 and latency the mean per-item
/// wall-clock time. Method names are checked before any work starts.
pub fn run_comparison<S: AsRef<str>>(
    items: &[EvalItem],
    methods: &[S],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let methods = parse_methods(methods)?;
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    cfg.retrieval.validate()?;
    let handles = methods
        .iter()
        .map(|&m| method_handle(m, ctx.llm, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut all_items = Vec::new();
    for (&method, llm) in methods.iter().zip(&handles) {
        let results: Vec<ItemResult> = if cfg.parallel {
            parallel::bounded_map(items, cfg.concurrency, |item| {
                let ids = run_method(ctx, method, llm, &item.question, cfg)?;
                score_item(method, item, ids, None)
            })
            .into_iter()
            .collect::<Result<_, _>>()?
        } else {
            items
                .iter()
                .map(|item| {
                    let (ids, secs) = measure_latency(|| run_method(ctx, method, llm, &item.question, cfg));
                    score_item(method, item, ids?, Some(secs))
                })
                .collect::<Result<_, _>>()?
        };
        let col = |f: fn(&ItemResult) -> f64| mean(&results.iter().map(f).collect::<Vec<_>>());
        rows.push(ReportRow {
            method,
            method_name: method.display_name().to_string(),
            precision: col(|r| r.precision),
            recall: col(|r| r.recall),
            f1_percent: 100.0 * col(|r| r.f1),
            latency_seconds: (!cfg.parallel).then(|| col(|r| r.latency_seconds.unwrap_or(0.0))),
        });
        all_items.extend(results);
    }
    Ok(EvalReport {
        caption: format!("{} items, k = {}", items.len(), cfg.retrieval.k),
        rows,
        items: all_items,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendGroup {
    pub backend: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendReport {
    pub groups: Vec<BackendGroup>,
}

impl BackendReport {
    pub fn table(&self) -> String {
        self.groups
            .iter()
            .map(|g| format!("[{}]\n{}", g.backend, g.report.table()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// True when every backend produced the same F1 column.
    pub fn f1_invariant(&self) -> bool {
        self.groups
            .windows(2)
            .all(|w| w[0].report.f1_column() == w[1].report.f1_column())
    }
}

/// Copies `source` into each named backend (file-backed stores live under
/// `workdir`) and runs the same comparison against each.
pub fn compare_backends<S: AsRef<str>>(
    items: &[EvalItem],
    methods: &[S],
    backends: &[&str],
    source: &dyn VectorStore,
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
    workdir: &Path,
) -> Result<BackendReport, EvalError> {
    if backends.len() < 2 {
        return Err(EvalError::TooFewBackends);
    }
    parse_methods(methods)?;
    let mut groups = Vec::new();
    for &name in backends {
        let path = workdir.join(format!("{name}.idx"));
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        let opts = BackendOptions {
            path: Some(path),
            shards: None,
        };
        let mut store = open_backend(name, source.dim(), &opts)?;
        copy_into(source, store.as_mut())?;
        let backend_ctx = EvalContext {
            store: store.as_ref(),
            ..*ctx
        };
        groups.push(BackendGroup {
            backend: name.to_string(),
            report: run_comparison(items, methods, &backend_ctx, cfg)?,
        });
    }
    Ok(BackendReport { groups })
}
