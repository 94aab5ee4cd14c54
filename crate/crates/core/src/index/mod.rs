//! Exact top-k cosine search over interchangeable vector-store backends.
//!
//! Every backend ranks hits by score descending with ties broken by ascending
//! chunk id, so backends holding the same vectors return the same hits.

mod codec;
mod file;
mod memory;
mod scan;
mod sharded;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::embed::EmbeddingVector;

pub use codec::{load_index, save_index, read_index_file, write_index_file, INDEX_MAGIC, INDEX_VERSION};
pub use file::FileIndex;
pub use memory::MemoryIndex;
pub use scan::{rank_hits, topk_sequential};
#[cfg(feature = "parallel")]
pub use scan::topk_parallel;
pub use sharded::ShardedIndex;

pub const BACKEND_IN_MEMORY: &str = "in-memory-exact";
pub const BACKEND_FILE: &str = "file-backed";
pub const BACKEND_SHARDED: &str = "sharded-exact";

/// Names accepted by [`open_backend`].
pub const REGISTERED_BACKENDS: [&str; 3] = [BACKEND_IN_MEMORY, BACKEND_FILE, BACKEND_SHARDED];

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate chunk id in upsert batch: {0}")]
    DuplicateId(String),
    #[error("cannot index zero-norm vector for {0}")]
    ZeroNorm(String),
    #[error("k must be positive")]
    ZeroK,
    #[error("index file not found")]
    NotFound,
    #[error("index checksum mismatch")]
    Checksum,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("unknown backend: {0}")]
    UnknownBackend(String),
    #[error("backend {0} needs a file path")]
    MissingPath(String),
    #[error("index io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One ranked retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    /// Cosine similarity.
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBackendDescriptor {
    pub backend_name: String,
    pub supports_persistence: bool,
}

pub trait VectorStore: Send + Sync {
    fn descriptor(&self) -> IndexBackendDescriptor;
    fn dim(&self) -> usize;
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts or replaces entries by id; returns the number written. On error
    /// the store is unchanged.
    fn upsert(&mut self, entries: Vec<(String, EmbeddingVector)>) -> Result<usize, IndexError>;

    /// Top `min(k, len)` hits. An empty store yields an empty list.
    fn search_topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError>;

    /// Every stored entry, in storage order.
    fn entries(&self) -> Result<Vec<(String, EmbeddingVector)>, IndexError>;
}

/// Upserts chunk vectors keyed by chunk id.
pub fn upsert_chunks(
    store: &mut dyn VectorStore,
    pairs: &[(Chunk, EmbeddingVector)],
) -> Result<usize, IndexError> {
    store.upsert(
        pairs
            .iter()
            .map(|(c, v)| (c.id.clone(), v.clone()))
            .collect(),
    )
}

/// Checks a batch before any mutation.
pub(crate) fn validate_batch(
    dim: usize,
    entries: &[(String, EmbeddingVector)],
) -> Result<(), IndexError> {
    let mut seen = std::collections::HashSet::with_capacity(entries.len());
    for (id, v) in entries {
        if v.dim() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        if v.norm() == 0.0 {
            return Err(IndexError::ZeroNorm(id.clone()));
        }
        if !seen.insert(id.as_str()) {
            return Err(IndexError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

pub(crate) fn check_query(dim: usize, query: &EmbeddingVector, k: usize) -> Result<(), IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if query.dim() != dim {
        return Err(IndexError::DimensionMismatch {
            expected: dim,
            got: query.dim(),
        });
    }
    Ok(())
}

/// Options for [`open_backend`].
#[derive(Debug, Clone, Default)]
pub struct BackendOptions {
    /// Required by the file-backed store.
    pub path: Option<PathBuf>,
    /// Shard count for the sharded store; defaults to 4.
    pub shards: Option<usize>,
}

/// Builds an empty (or, for the file-backed store, existing) backend by name.
pub fn open_backend(
    name: &str,
    dim: usize,
    opts: &BackendOptions,
) -> Result<Box<dyn VectorStore>, IndexError> {
    match name {
        BACKEND_IN_MEMORY => Ok(Box::new(MemoryIndex::new(dim))),
        BACKEND_FILE => {
            let path = opts
                .path
                .clone()
                .ok_or_else(|| IndexError::MissingPath(name.to_string()))?;
            Ok(Box::new(FileIndex::open_or_create(path, dim)?))
        }
        BACKEND_SHARDED => Ok(Box::new(ShardedIndex::new(dim, opts.shards.unwrap_or(4)))),
        other => Err(IndexError::UnknownBackend(other.to_string())),
    }
}

/// Copies every entry of `src` into `dst`.
pub fn copy_into(src: &dyn VectorStore, dst: &mut dyn VectorStore) -> Result<usize, IndexError> {
    dst.upsert(src.entries()?)
}
