//! Search, gather-evidence and answer tools, and the loop that drives them.
//!
//! Every citation that reaches an [`Answer`] has been checked against the
//! corpus: a `(label, page N)` tag whose label is unknown or whose page is
//! out of range is stripped from the text and recorded as rejected.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::generator::{GenError, GenerationHandle, PromptTask};
use crate::parallel;
use crate::refgraph::ReferenceEntry;
use crate::retrieval::{FusionResult, Query, RankedList, RetrievalConfig, RetrievalError, Retriever};

static CITATION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(([^(),\n]+), page (\d+)\)").expect("valid regex"));

static EVIDENCE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)score:\s*([+-]?[0-9]*\.?[0-9]+)\s*[,;]?\s*summary:\s*(.+)").expect("valid regex")
});

pub const INSUFFICIENT_EVIDENCE: &str = "Insufficient evidence to answer the question.";

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    /// Every evidence request of a round failed before any evidence existed.
    #[error("all evidence requests failed: {0}")]
    ProviderOutage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Basic,
    Fusion,
}

impl std::str::FromStr for SearchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "basic" | "rag" => Ok(Self::Basic),
            "fusion" => Ok(Self::Fusion),
            other => Err(format!("unknown mode {other:?} (expected basic or fusion)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Citation {
    pub doc_label: String,
    pub page: usize,
}

impl Citation {
    /// `(label, page N)`
    pub fn render(&self) -> String {
        format!("({}, page {})", self.doc_label, self.page)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub chunk_id: String,
    pub question: Query,
    pub summary: String,
    pub relevance_score: f64,
    pub citation: Citation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub citations: Vec<Citation>,
    pub evidence_used: Vec<Evidence>,
    pub complete: bool,
    pub iterations: usize,
    /// False when the generator cited something outside the corpus.
    pub grounded: bool,
    pub rejected_citations: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_iterations: usize,
    pub evidence_per_iteration: usize,
    pub answer_token_budget: u32,
    pub mode: SearchMode,
    /// Evidence scored below this is dropped.
    pub relevance_threshold: f64,
    pub concurrency: usize,
    pub retrieval: RetrievalConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            evidence_per_iteration: 10,
            answer_token_budget: 500,
            mode: SearchMode::Basic,
            relevance_threshold: 0.5,
            concurrency: parallel::DEFAULT_CONCURRENCY,
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_iterations == 0
            || self.evidence_per_iteration == 0
            || self.answer_token_budget == 0
            || self.concurrency == 0
        {
            return Err(AgentError::InvalidConfig(
                "max_iterations, evidence_per_iteration, answer_token_budget and concurrency must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.relevance_threshold) {
            return Err(AgentError::InvalidConfig("relevance_threshold must be in [0, 1]".into()));
        }
        self.retrieval.validate()?;
        Ok(())
    }
}

/// Read-only view the tools operate on.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub corpus: &'a Corpus,
    pub retriever: Retriever<'a>,
    pub llm: &'a GenerationHandle,
}

/// A chunk in a ranked result, whichever retrieval produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChunk {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutcome {
    Basic(RankedList),
    Fusion(FusionResult),
}

impl SearchOutcome {
    pub fn hits(&self) -> Vec<RankedChunk> {
        match self {
            Self::Basic(list) => list
                .hits
                .iter()
                .map(|h| RankedChunk {
                    chunk_id: h.chunk_id.clone(),
                    score: h.score,
                    rank: h.rank,
                })
                .collect(),
            Self::Fusion(f) => f
                .fused
                .items
                .iter()
                .map(|i| RankedChunk {
                    chunk_id: i.chunk_id.clone(),
                    score: i.rrf_score,
                    rank: i.fused_rank,
                })
                .collect(),
        }
    }

    pub fn chunk_ids(&self) -> Vec<String> {
        self.hits().into_iter().map(|h| h.chunk_id).collect()
    }
}

/// Delegates to basic or fusion retrieval.
pub fn tool_search(ctx: &AgentContext<'_>, q: &Query, cfg: &AgentConfig) -> Result<SearchOutcome, AgentError> {
    Ok(match cfg.mode {
        SearchMode::Basic => SearchOutcome::Basic(ctx.retriever.retrieve_basic(q, &cfg.retrieval)?),
        SearchMode::Fusion => {
            SearchOutcome::Fusion(ctx.retriever.retrieve_fusion(q, &cfg.retrieval, ctx.llm)?)
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceBatch {
    pub evidence: Vec<Evidence>,
    pub warnings: Vec<String>,
    /// Hits whose evidence call failed at the generator.
    pub provider_failures: usize,
}

/// Parses `score: <x>, summary: <text>`; the score must lie in [0, 1].
pub fn parse_evidence_reply(reply: &str) -> Option<(f64, String)> {
    let caps = EVIDENCE_RE.captures(reply)?;
    let score: f64 = caps[1].parse().ok()?;
    let summary = caps[2].trim().to_string();
    if !(0.0..=1.0).contains(&score) || summary.is_empty() {
        return None;
    }
    Some((score, summary))
}

/// Summarizes each hit against the question (one generator call per hit,
/// bounded concurrency) and keeps those at or above the relevance threshold.
pub fn tool_gather_evidence(
    ctx: &AgentContext<'_>,
    q: &Query,
    hits: &[RankedChunk],
    cfg: &AgentConfig,
) -> EvidenceBatch {
    let outcomes = parallel::bounded_map(hits, cfg.concurrency, |hit| -> Result<Option<Evidence>, (bool, String)> {
        let chunk = ctx
            .corpus
            .chunk(&hit.chunk_id)
            .ok_or_else(|| (false, format!("hit {} does not resolve to a chunk", hit.chunk_id)))?;
        let doc = ctx
            .corpus
            .document(&chunk.doc_id)
            .ok_or_else(|| (false, format!("chunk {} has no document", chunk.id)))?;
        let citation = Citation {
            doc_label: doc.label.clone(),
            page: chunk.page,
        };
        let rendered = citation.render();
        let reply = ctx
            .llm
            .run(
                PromptTask::Evidence,
                &[("question", q.text()), ("citation", &rendered), ("passage", &chunk.text)],
                256,
            )
            .map_err(|e| (true, format!("evidence for {}: {e}", chunk.id)))?;
        let (score, summary) = parse_evidence_reply(&reply)
            .ok_or_else(|| (false, format!("unparseable evidence reply for {}", chunk.id)))?;
        if score < cfg.relevance_threshold {
            return Ok(None);
        }
        Ok(Some(Evidence {
            chunk_id: chunk.id.clone(),
            question: q.clone(),
            summary,
            relevance_score: score,
            citation,
        }))
    });
    let mut batch = EvidenceBatch::default();
    for outcome in outcomes {
        match outcome {
            Ok(Some(e)) => batch.evidence.push(e),
            Ok(None) => {}
            Err((provider, w)) => {
                tracing::warn!("{w}");
                batch.provider_failures += usize::from(provider);
                batch.warnings.push(w);
            }
        }
    }
    batch
}

/// Extracts `(label, page N)` citations, keeping only those that resolve to
/// the corpus. Unresolvable tags are removed from the returned text.
pub fn ground_citations(text: &str, corpus: &Corpus) -> (String, Vec<Citation>, Vec<String>) {
    let mut citations: Vec<Citation> = Vec::new();
    let mut rejected = Vec::new();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in CITATION_RE.captures_iter(text) {
        let m = caps.get(0).expect("whole match");
        let label = caps[1].trim();
        let page: usize = caps[2].parse().unwrap_or(0);
        let valid = corpus
            .document_by_label(label)
            .is_some_and(|d| page >= 1 && page <= d.page_count());
        out.push_str(&text[last..m.start()]);
        if valid {
            let c = Citation {
                doc_label: label.to_string(),
                page,
            };
            out.push_str(&c.render());
            if !citations.contains(&c) {
                citations.push(c);
            }
        } else {
            rejected.push(m.as_str().to_string());
            while out.ends_with(' ') {
                out.pop();
            }
        }
        last = m.end();
    }
    out.push_str(&text[last..]);
    (out.trim().to_string(), citations, rejected)
}

/// Drafts an answer from the evidence. Empty evidence short-circuits to an
/// incomplete "insufficient evidence" answer without calling the generator.
pub fn tool_answer(
    ctx: &AgentContext<'_>,
    q: &Query,
    evidence: &[Evidence],
    budget: u32,
) -> Result<Answer, AgentError> {
    if evidence.is_empty() {
        return Ok(Answer {
            text: INSUFFICIENT_EVIDENCE.to_string(),
            citations: Vec::new(),
            evidence_used: Vec::new(),
            complete: false,
            iterations: 0,
            grounded: true,
            rejected_citations: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let listing: String = evidence
        .iter()
        .map(|e| format!("- {} {}\n", e.citation.render(), e.summary))
        .collect();
    let budget_str = budget.to_string();
    let reply = ctx.llm.run(
        PromptTask::Answer,
        &[("question", q.text()), ("budget", &budget_str), ("evidence", &listing)],
        budget,
    )?;
    let (text, citations, rejected) = ground_citations(&reply, ctx.corpus);
    let mut warnings = Vec::new();
    if !rejected.is_empty() {
        warnings.push(format!("rejected {} ungrounded citation(s)", rejected.len()));
    }
    Ok(Answer {
        complete: !citations.is_empty(),
        text,
        citations,
        evidence_used: evidence.to_vec(),
        iterations: 0,
        grounded: rejected.is_empty(),
        rejected_citations: rejected,
        warnings,
    })
}

fn is_affirmative(reply: &str) -> bool {
    reply
        .trim_start()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .get(..3)
        .is_some_and(|w| w.eq_ignore_ascii_case("yes"))
}

/// Runs search → evidence → draft → completeness check for up to
/// `max_iterations` rounds, refining the search query after each "no".
/// Evidence accumulates across rounds; chunks already summarized are not
/// summarized again.
pub fn run_agent(ctx: &AgentContext<'_>, q: &Query, cfg: &AgentConfig) -> Result<Answer, AgentError> {
    cfg.validate()?;
    let mut search_query = q.clone();
    let mut evidence: Vec<Evidence> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut warnings = Vec::new();
    let mut draft: Option<Answer> = None;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let outcome = tool_search(ctx, &search_query, cfg)?;
        if let SearchOutcome::Fusion(f) = &outcome {
            warnings.extend(f.expanded.warnings.iter().cloned());
        }
        let fresh: Vec<RankedChunk> = outcome
            .hits()
            .into_iter()
            .filter(|h| !seen.contains(&h.chunk_id))
            .take(cfg.evidence_per_iteration)
            .collect();
        let no_hits = fresh.is_empty();
        seen.extend(fresh.iter().map(|h| h.chunk_id.clone()));
        let batch = tool_gather_evidence(ctx, q, &fresh, cfg);
        if evidence.is_empty() && !fresh.is_empty() && batch.provider_failures == fresh.len() {
            return Err(AgentError::ProviderOutage(batch.warnings[0].clone()));
        }
        warnings.extend(batch.warnings);
        evidence.extend(batch.evidence);

        if evidence.is_empty() && no_hits {
            break;
        }
        let current = tool_answer(ctx, q, &evidence, cfg.answer_token_budget)?;
        let done = if current.citations.is_empty() {
            false
        } else {
            let verdict = ctx.llm.run(
                PromptTask::Completeness,
                &[("question", q.text()), ("draft", &current.text)],
                64,
            )?;
            is_affirmative(&verdict)
        };
        let text = current.text.clone();
        draft = Some(current);
        if done {
            let mut answer = draft.take().expect("draft set above");
            answer.complete = true;
            answer.iterations = iterations;
            answer.warnings.extend(warnings);
            return Ok(answer);
        }
        if iterations < cfg.max_iterations {
            match ctx.llm.run(
                PromptTask::Refine,
                &[("question", q.text()), ("draft", &text)],
                64,
            ) {
                Ok(reply) => {
                    if let Some(next) = reply.lines().find_map(|l| Query::new(l.trim()).ok()) {
                        search_query = next;
                    }
                }
                Err(e) => warnings.push(format!("query refinement failed: {e}")),
            }
        }
    }

    let mut answer = match draft {
        Some(d) => d,
        None => tool_answer(ctx, q, &evidence, cfg.answer_token_budget)?,
    };
    answer.complete = false;
    answer.iterations = iterations;
    answer.warnings.extend(warnings);
    Ok(answer)
}

/// Output slot for one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOutput {
    pub reference: ReferenceEntry,
    pub output: Result<String, String>,
}

/// Runs `task_prompt` against each reference with at most `bound` calls in
/// flight. Outputs come back in the input (relevance) order; a failed call
/// fills only its own slot.
pub fn parallel_generate_over_refs(
    task_prompt: &str,
    refs: &[ReferenceEntry],
    llm: &GenerationHandle,
    bound: usize,
) -> Vec<ReferenceOutput> {
    parallel::bounded_map(refs, bound, |r| ReferenceOutput {
        reference: r.clone(),
        output: llm
            .run(
                PromptTask::ReferenceTask,
                &[("task", task_prompt), ("reference", &r.raw_text)],
                500,
            )
            .map_err(|e| e.to_string()),
    })
}
