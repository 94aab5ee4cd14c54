//! Reference extraction, relevance ranking and relation graphs.

mod extract;
mod mermaid;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::embed::{embed_batch, EmbedError, Embedder};
use crate::generator::{GenerationHandle, PromptTask};
use crate::parallel;

pub use extract::{extract_references, ReferenceEntry, ReferenceExtraction};
pub use mermaid::{emit_mermaid, escape_label, parse_mermaid, unescape_label, Flowchart};

/// Relation label used when the generator gives nothing usable.
pub const FALLBACK_RELATION: &str = "cites";
pub const MAX_RELATION_WORDS: usize = 5;
pub const HOST_NODE_ID: &str = "host";

static SCORE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)score:\s*([0-9]*\.?[0-9]+)").expect("valid regex"));

#[derive(Debug, thiserror::Error)]
pub enum RefGraphError {
    #[error("k must be positive")]
    ZeroK,
    #[error("no references: {0}")]
    NoReferences(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid mermaid: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedReference {
    pub entry: ReferenceEntry,
    /// Relevance in [0, 1].
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub label: String,
}

/// Host node plus one node per reference; edges go host → reference.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

pub fn reference_node_id(entry: &ReferenceEntry) -> String {
    format!("ref_{}", entry.index)
}

/// Maps cosine similarity from [-1, 1] onto [0, 1].
pub fn similarity_score(cosine: f64) -> f64 {
    ((cosine + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Sorts by score descending, ties by ascending reference index, keeps `k`.
pub fn select_topk(mut scored: Vec<RankedReference>, k: usize) -> Result<Vec<RankedReference>, RefGraphError> {
    if k == 0 {
        return Err(RefGraphError::ZeroK);
    }
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.entry.index.cmp(&b.entry.index))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Scores each reference against `host_text` by embedding similarity and,
/// when `rescore` is given, averages in a generator relevance score. A failed
/// or unparseable rescoring keeps the similarity score and adds a warning.
pub fn rank_references_topk(
    host_label: &str,
    host_text: &str,
    refs: &[ReferenceEntry],
    k: usize,
    embedder: &dyn Embedder,
    rescore: Option<(&GenerationHandle, usize)>,
) -> Result<(Vec<RankedReference>, Vec<String>), RefGraphError> {
    if k == 0 {
        return Err(RefGraphError::ZeroK);
    }
    if refs.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut texts = Vec::with_capacity(refs.len() + 1);
    texts.push(host_text.to_string());
    texts.extend(refs.iter().map(|r| r.raw_text.clone()));
    let vectors = embed_batch(&texts, embedder)?;
    let host = &vectors[0];
    let mut scored: Vec<RankedReference> = refs
        .iter()
        .zip(&vectors[1..])
        .map(|(r, v)| RankedReference {
            entry: r.clone(),
            score: similarity_score(host.cosine(v)),
        })
        .collect();

    let mut warnings = Vec::new();
    if let Some((llm, bound)) = rescore {
        let extra = parallel::bounded_map(refs, bound, |r| {
            let reply = llm
                .run(
                    PromptTask::ReferenceScore,
                    &[("host", host_label), ("reference", &r.raw_text)],
                    32,
                )
                .map_err(|e| e.to_string())?;
            SCORE_RE
                .captures(&reply)
                .and_then(|c| c[1].parse::<f64>().ok())
                .filter(|s| (0.0..=1.0).contains(s))
                .ok_or_else(|| "unparseable score".to_string())
        });
        for (s, e) in scored.iter_mut().zip(extra) {
            match e {
                Ok(g) => s.score = (s.score + g) / 2.0,
                Err(w) => warnings.push(format!("reference {} rescoring: {w}", s.entry.index)),
            }
        }
    }
    Ok((select_topk(scored, k)?, warnings))
}

/// Cleans a generated relation: first line, no quotes or trailing
/// punctuation, at most five words. Empty input becomes the fallback.
pub fn normalize_relation(raw: &str) -> String {
    let line = raw.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let words: Vec<&str> = line
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| matches!(c, '"' | '\'' | '*' | '`' | '.' | ',' | ':' | ';')))
        .filter(|w| !w.is_empty())
        .take(MAX_RELATION_WORDS)
        .collect();
    if words.is_empty() {
        FALLBACK_RELATION.to_string()
    } else {
        words.join(" ")
    }
}

/// Builds the host → reference graph, asking the generator for each
/// relation label with at most `bound` calls in flight.
pub fn build_relation_graph(
    host_label: &str,
    host_context: &str,
    refs: &[RankedReference],
    llm: Option<&GenerationHandle>,
    bound: usize,
) -> (RelationGraph, Vec<String>) {
    let relations: Vec<Result<String, String>> = match llm {
        Some(llm) => parallel::bounded_map(refs, bound, |r| {
            llm.run(
                PromptTask::Relation,
                &[("host", host_label), ("reference", &r.entry.raw_text), ("context", host_context)],
                32,
            )
            .map(|s| normalize_relation(&s))
            .map_err(|e| format!("relation for reference {}: {e}", r.entry.index))
        }),
        None => refs.iter().map(|_| Ok(FALLBACK_RELATION.to_string())).collect(),
    };
    let mut graph = RelationGraph {
        nodes: vec![GraphNode {
            id: HOST_NODE_ID.into(),
            label: host_label.into(),
        }],
        edges: Vec::new(),
    };
    let mut warnings = Vec::new();
    for (r, rel) in refs.iter().zip(relations) {
        let id = reference_node_id(&r.entry);
        graph.nodes.push(GraphNode {
            id: id.clone(),
            label: r.entry.short_label(80),
        });
        let label = rel.unwrap_or_else(|w| {
            warnings.push(w);
            FALLBACK_RELATION.to_string()
        });
        graph.edges.push(GraphEdge {
            from: HOST_NODE_ID.into(),
            to: id,
            label,
        });
    }
    (graph, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefGraphOutput {
    pub doc_id: String,
    pub references: Vec<RankedReference>,
    pub graph: RelationGraph,
    pub mermaid: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefGraphOptions {
    pub k: usize,
    pub rescore: bool,
    pub label_relations: bool,
    pub concurrency: usize,
}

impl Default for RefGraphOptions {
    fn default() -> Self {
        Self {
            k: 10,
            rescore: false,
            label_relations: true,
            concurrency: parallel::DEFAULT_CONCURRENCY,
        }
    }
}

/// Text representing the host paper: its first chunk, or its first page.
pub fn host_text<'a>(corpus: &'a Corpus, doc: &'a Document) -> &'a str {
    corpus
        .chunks_of(&doc.id)
        .first()
        .map(|c| c.text.as_str())
        .unwrap_or_else(|| doc.pages.first().map(String::as_str).unwrap_or(""))
}

/// Extracts, ranks and graphs the references of one ingested document.
pub fn reference_graph(
    corpus: &Corpus,
    doc_id_or_label: &str,
    embedder: &dyn Embedder,
    llm: Option<&GenerationHandle>,
    opts: &RefGraphOptions,
) -> Result<RefGraphOutput, RefGraphError> {
    if opts.k == 0 {
        return Err(RefGraphError::ZeroK);
    }
    let doc = corpus
        .resolve(doc_id_or_label)
        .ok_or_else(|| RefGraphError::UnknownDocument(doc_id_or_label.to_string()))?;
    let extraction = extract_references(doc.reference_source());
    if extraction.entries.is_empty() {
        return Err(RefGraphError::NoReferences(
            extraction.diagnostic.unwrap_or_else(|| "none found".into()),
        ));
    }
    let host = host_text(corpus, doc);
    let rescore = if opts.rescore { llm.map(|l| (l, opts.concurrency)) } else { None };
    let (references, mut warnings) =
        rank_references_topk(&doc.label, host, &extraction.entries, opts.k, embedder, rescore)?;
    let relation_llm = if opts.label_relations { llm } else { None };
    let (graph, w) = build_relation_graph(&doc.label, host, &references, relation_llm, opts.concurrency);
    warnings.extend(w);
    let mermaid = emit_mermaid(&graph)?;
    Ok(RefGraphOutput {
        doc_id: doc.id.clone(),
        references,
        graph,
        mermaid,
        warnings,
    })
}
