use std::cmp::Ordering;

use super::SearchHit;
use crate::embed::EmbeddingVector;

/// Descending score, then ascending id.
fn hit_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Selects and orders the best `k` of `(score, id)` pairs.
pub fn rank_hits(mut scored: Vec<(f64, &str)>, k: usize) -> Vec<SearchHit> {
    if scored.len() > k && k > 0 {
        scored.select_nth_unstable_by(k - 1, hit_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(hit_order);
    scored.truncate(k);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, id))| SearchHit {
            chunk_id: id.to_string(),
            score,
            rank: i + 1,
        })
        .collect()
}

pub fn topk_sequential(
    ids: &[String],
    vectors: &[EmbeddingVector],
    query: &EmbeddingVector,
    k: usize,
) -> Vec<SearchHit> {
    let scored = ids
        .iter()
        .zip(vectors)
        .map(|(id, v)| (query.cosine(v), id.as_str()))
        .collect();
    rank_hits(scored, k)
}

#[cfg(feature = "parallel")]
pub fn topk_parallel(
    ids: &[String],
    vectors: &[EmbeddingVector],
    query: &EmbeddingVector,
    k: usize,
) -> Vec<SearchHit> {
    use rayon::prelude::*;
    let scored = ids
        .par_iter()
        .zip(vectors.par_iter())
        .map(|(id, v)| (query.cosine(v), id.as_str()))
        .collect();
    rank_hits(scored, k)
}

/// Below this many vectors the parallel scan is not worth the dispatch.
#[cfg(feature = "parallel")]
const PARALLEL_THRESHOLD: usize = 4096;

pub(crate) fn topk(
    ids: &[String],
    vectors: &[EmbeddingVector],
    query: &EmbeddingVector,
    k: usize,
) -> Vec<SearchHit> {
    #[cfg(feature = "parallel")]
    if ids.len() >= PARALLEL_THRESHOLD {
        return topk_parallel(ids, vectors, query, k);
    }
    topk_sequential(ids, vectors, query, k)
}
