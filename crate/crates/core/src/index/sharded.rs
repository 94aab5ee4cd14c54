use std::collections::HashMap;

use super::{
    check_query, scan, validate_batch, IndexBackendDescriptor, IndexError, MemoryIndex, SearchHit,
    VectorStore, BACKEND_SHARDED,
};
use crate::embed::EmbeddingVector;
use crate::parallel;

/// Round-robin partitioned exact scan: per-shard top-k merged into a global
/// top-k. Exact because every global top-k member is in its shard's top-k.
#[derive(Debug, Clone)]
pub struct ShardedIndex {
    dim: usize,
    shards: Vec<MemoryIndex>,
    owner: HashMap<String, usize>,
}

impl ShardedIndex {
    pub fn new(dim: usize, shards: usize) -> Self {
        Self {
            dim,
            shards: (0..shards.max(1)).map(|_| MemoryIndex::new(dim)).collect(),
            owner: HashMap::new(),
        }
    }
}

impl VectorStore for ShardedIndex {
    fn descriptor(&self) -> IndexBackendDescriptor {
        IndexBackendDescriptor {
            backend_name: BACKEND_SHARDED.to_string(),
            supports_persistence: false,
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.owner.len()
    }

    fn upsert(&mut self, entries: Vec<(String, EmbeddingVector)>) -> Result<usize, IndexError> {
        validate_batch(self.dim, &entries)?;
        let n = entries.len();
        let mut per_shard: Vec<Vec<(String, EmbeddingVector)>> = vec![Vec::new(); self.shards.len()];
        for (id, v) in entries {
            let next = self.owner.len() % self.shards.len();
            let shard = *self.owner.entry(id.clone()).or_insert(next);
            per_shard[shard].push((id, v));
        }
        for (shard, batch) in self.shards.iter_mut().zip(per_shard) {
            shard.upsert(batch)?;
        }
        Ok(n)
    }

    fn search_topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        check_query(self.dim, query, k)?;
        let partial = parallel::par_map(&self.shards, |s| s.search_topk(query, k));
        let mut merged = Vec::new();
        for hits in partial {
            merged.extend(hits?);
        }
        Ok(scan::rank_hits(
            merged.iter().map(|h| (h.score, h.chunk_id.as_str())).collect(),
            k,
        ))
    }

    fn entries(&self) -> Result<Vec<(String, EmbeddingVector)>, IndexError> {
        let mut all = Vec::with_capacity(self.len());
        for s in &self.shards {
            all.extend(s.entries()?);
        }
        Ok(all)
    }
}
