//! Basic retrieval and multi-query fusion.
//!
//! Fusion expands the user question into generated variants, retrieves a
//! ranked list per query and merges the lists with reciprocal rank fusion:
//! `score(d) = Σ_L 1 / (c + rank_L(d))` over the lists containing `d`, with
//! 1-based ranks.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embed::{embed_batch, embed_one, EmbedError, Embedder};
use crate::generator::{GenerationHandle, PromptTask};
use crate::index::{IndexError, SearchHit, VectorStore};
use crate::parallel;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("n_variants must be positive")]
    ZeroVariants,
    #[error("rrf_constant must be positive")]
    BadRrfConstant,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// A non-blank user query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Query(String);

impl Query {
    pub fn new(text: impl Into<String>) -> Result<Self, RetrievalError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    /// Trimmed with internal whitespace runs collapsed to single spaces.
    pub fn normalized(&self) -> String {
        normalize_ws(&self.0)
    }
}

impl TryFrom<String> for Query {
    type Error = RetrievalError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<Query> for String {
    fn from(q: Query) -> Self {
        q.0
    }
}

impl std::fmt::Display for Query {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub n_variants: usize,
    pub rrf_constant: f64,
    pub per_list_depth: usize,
    /// Bound on concurrent per-variant retrievals.
    pub concurrency: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_variants: 4,
            rrf_constant: 60.0,
            per_list_depth: 20,
            concurrency: parallel::DEFAULT_CONCURRENCY,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 || self.n_variants == 0 || self.per_list_depth == 0 || self.concurrency == 0 {
            return Err(RetrievalError::InvalidConfig(
                "k, n_variants, per_list_depth and concurrency must be positive".into(),
            ));
        }
        if !self.rrf_constant.is_finite() || self.rrf_constant <= 0.0 {
            return Err(RetrievalError::BadRrfConstant);
        }
        if self.per_list_depth < self.k {
            return Err(RetrievalError::InvalidConfig(
                "per_list_depth must be at least k".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: Query,
    pub hits: Vec<SearchHit>,
}

impl RankedList {
    pub fn chunk_ids(&self) -> Vec<String> {
        self.hits.iter().map(|h| h.chunk_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedQueries {
    pub original: Query,
    pub variants: Vec<Query>,
    /// Set when generation failed or produced no usable variant.
    pub degraded: bool,
    pub warnings: Vec<String>,
}

impl ExpandedQueries {
    /// Original first, then variants.
    pub fn all(&self) -> Vec<Query> {
        std::iter::once(self.original.clone())
            .chain(self.variants.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedItem {
    pub chunk_id: String,
    pub rrf_score: f64,
    pub fused_rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedRanking {
    pub items: Vec<FusedItem>,
}

impl FusedRanking {
    pub fn chunk_ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.chunk_id.clone()).collect()
    }

    pub fn truncate(&mut self, k: usize) {
        self.items.truncate(k);
    }
}

/// Read-only retrieval over one store and embedder.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub store: &'a dyn VectorStore,
    pub embedder: &'a dyn Embedder,
}

impl<'a> Retriever<'a> {
    pub fn new(store: &'a dyn VectorStore, embedder: &'a dyn Embedder) -> Self {
        Self { store, embedder }
    }

    /// Top-`k` hits for `q`, no expansion.
    pub fn retrieve_basic(&self, q: &Query, cfg: &RetrievalConfig) -> Result<RankedList, RetrievalError> {
        cfg.validate()?;
        self.search(q, cfg.k)
    }

    pub fn search(&self, q: &Query, depth: usize) -> Result<RankedList, RetrievalError> {
        if self.store.is_empty() {
            return Ok(RankedList {
                query: q.clone(),
                hits: Vec::new(),
            });
        }
        let v = embed_one(q.text(), self.embedder)?;
        Ok(RankedList {
            query: q.clone(),
            hits: self.store.search_topk(&v, depth)?,
        })
    }

    /// Expands `q`, retrieves `per_list_depth` hits per query (bounded
    /// concurrency), fuses them and keeps the top `k`.
    pub fn retrieve_fusion(
        &self,
        q: &Query,
        cfg: &RetrievalConfig,
        generator: &GenerationHandle,
    ) -> Result<FusionResult, RetrievalError> {
        cfg.validate()?;
        let expanded = generate_query_variants(q, cfg.n_variants, generator)?;
        let queries = expanded.all();
        let lists = if self.store.is_empty() {
            queries
                .iter()
                .map(|query| RankedList {
                    query: query.clone(),
                    hits: Vec::new(),
                })
                .collect()
        } else {
            let texts: Vec<String> = queries.iter().map(|x| x.text().to_string()).collect();
            let vectors = embed_batch(&texts, self.embedder)?;
            let pairs: Vec<_> = queries.into_iter().zip(vectors).collect();
            parallel::bounded_map(&pairs, cfg.concurrency, |(query, v)| {
                self.store
                    .search_topk(v, cfg.per_list_depth)
                    .map(|hits| RankedList {
                        query: query.clone(),
                        hits,
                    })
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
        };
        let mut fused = rrf_fuse(&lists, cfg.rrf_constant)?;
        fused.truncate(cfg.k);
        Ok(FusionResult {
            expanded,
            lists,
            fused,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub expanded: ExpandedQueries,
    pub lists: Vec<RankedList>,
    pub fused: FusedRanking,
}

/// Strips list markers such as `1.`, `2)`, `-`, `*` from a generated line.
fn clean_variant_line(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t.trim_matches('"').trim()
}

/// Asks the generator for `n` rephrasings of `q`.
///
/// Duplicates (of the original or each other, after whitespace
/// normalization) trigger one regeneration for the missing count; anything
/// still missing is dropped. Generator failure never errors: the result
/// falls back to the original alone with `degraded` set.
pub fn generate_query_variants(
    q: &Query,
    n: usize,
    generator: &GenerationHandle,
) -> Result<ExpandedQueries, RetrievalError> {
    if n == 0 {
        return Err(RetrievalError::ZeroVariants);
    }
    let mut seen: HashSet<String> = HashSet::from([q.normalized()]);
    let mut variants = Vec::new();
    let mut warnings = Vec::new();

    for round in 0..2 {
        let missing = n - variants.len();
        if missing == 0 {
            break;
        }
        let n_str = missing.to_string();
        let reply = match generator.run(
            PromptTask::Variants,
            &[("question", q.text()), ("n", &n_str)],
            256,
        ) {
            Ok(r) => r,
            Err(e) => {
                warnings.push(format!("query variant generation failed: {e}"));
                break;
            }
        };
        let before = variants.len();
        for line in reply.lines() {
            if variants.len() == n {
                break;
            }
            let Ok(v) = Query::new(clean_variant_line(line)) else {
                continue;
            };
            if seen.insert(v.normalized()) {
                variants.push(v);
            }
        }
        if round == 1 && variants.len() == before {
            warnings.push("regeneration produced no new distinct variants".into());
        }
    }
    if variants.len() < n {
        warnings.push(format!(
            "{} of {n} query variants dropped as duplicates",
            n - variants.len()
        ));
    }
    for w in &warnings {
        tracing::warn!(query = q.text(), "{w}");
    }
    Ok(ExpandedQueries {
        original: q.clone(),
        degraded: variants.is_empty(),
        variants,
        warnings,
    })
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Reciprocal rank fusion over `lists`.
///
/// Each list contributes `1 / (rrf_constant + rank)` for its first
/// occurrence of a chunk. Contributions are summed in ascending rank order
/// so the result does not depend on list order. Output is sorted by score
/// descending, ties (within a relative 1e-12) by ascending chunk id.
pub fn rrf_fuse(lists: &[RankedList], rrf_constant: f64) -> Result<FusedRanking, RetrievalError> {
    if !rrf_constant.is_finite() || rrf_constant <= 0.0 {
        return Err(RetrievalError::BadRrfConstant);
    }
    let mut ranks: HashMap<&str, Vec<usize>> = HashMap::new();
    for list in lists {
        let mut in_list = HashSet::new();
        for (pos, hit) in list.hits.iter().enumerate() {
            if in_list.insert(hit.chunk_id.as_str()) {
                ranks.entry(hit.chunk_id.as_str()).or_default().push(pos + 1);
            }
        }
    }
    let mut items: Vec<FusedItem> = ranks
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_unstable();
            let rrf_score = rs.iter().map(|&r| 1.0 / (rrf_constant + r as f64)).sum();
            FusedItem {
                chunk_id: id.to_string(),
                rrf_score,
                fused_rank: 0,
            }
        })
        .collect();
    items.sort_by(|a, b| {
        b.rrf_score
            .total_cmp(&a.rrf_score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    // Equal rational sums can differ in the last few ulps; such runs are
    // ties and fall back to id order.
    let mut start = 0;
    while start < items.len() {
        let mut end = start + 1;
        while end < items.len()
            && items[end - 1].rrf_score - items[end].rrf_score <= TIE_TOLERANCE * items[end - 1].rrf_score
        {
            end += 1;
        }
        items[start..end].sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        start = end;
    }
    for (i, item) in items.iter_mut().enumerate() {
        item.fused_rank = i + 1;
    }
    Ok(FusedRanking { items })
}
