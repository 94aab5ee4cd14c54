use std::collections::HashMap;

use super::{
    check_query, scan, validate_batch, IndexBackendDescriptor, IndexError, SearchHit, VectorStore,
    BACKEND_IN_MEMORY,
};
use crate::embed::EmbeddingVector;

/// Exact brute-force scan over vectors held in memory.
#[derive(Debug, Clone)]
pub struct MemoryIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    position: HashMap<String, usize>,
}

impl MemoryIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            position: HashMap::new(),
        }
    }

    pub(crate) fn from_entries(
        dim: usize,
        entries: Vec<(String, EmbeddingVector)>,
    ) -> Result<Self, IndexError> {
        let mut idx = Self::new(dim);
        idx.upsert(entries)?;
        Ok(idx)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }
}

impl VectorStore for MemoryIndex {
    fn descriptor(&self) -> IndexBackendDescriptor {
        IndexBackendDescriptor {
            backend_name: BACKEND_IN_MEMORY.to_string(),
            supports_persistence: false,
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn upsert(&mut self, entries: Vec<(String, EmbeddingVector)>) -> Result<usize, IndexError> {
        validate_batch(self.dim, &entries)?;
        let n = entries.len();
        for (id, v) in entries {
            match self.position.get(&id) {
                Some(&i) => self.vectors[i] = v,
                None => {
                    self.position.insert(id.clone(), self.ids.len());
                    self.ids.push(id);
                    self.vectors.push(v);
                }
            }
        }
        Ok(n)
    }

    fn search_topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        check_query(self.dim, query, k)?;
        Ok(scan::topk(&self.ids, &self.vectors, query, k))
    }

    fn entries(&self) -> Result<Vec<(String, EmbeddingVector)>, IndexError> {
        Ok(self.ids.iter().cloned().zip(self.vectors.iter().cloned()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    fn vec_of(e: &HashEmbedder, s: &str) -> EmbeddingVector {
        EmbeddingVector::new(e.vector(s)).unwrap()
    }

    #[test]
    fn upsert_is_idempotent() {
        let e = HashEmbedder::new(8);
        let mut idx = MemoryIndex::new(8);
        let batch: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|s| (s.to_string(), vec_of(&e, s)))
            .collect();
        assert_eq!(idx.upsert(batch.clone()).unwrap(), 3);
        assert_eq!(idx.upsert(batch).unwrap(), 3);
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.upsert(vec![]).unwrap(), 0);
        assert_eq!(idx.len(), 3);
    }

    #[test]
    fn dim_mismatch_leaves_index_unchanged() {
        let e = HashEmbedder::new(8);
        let mut idx = MemoryIndex::new(8);
        idx.upsert(vec![("a".into(), vec_of(&e, "a"))]).unwrap();
        let bad = vec![
            ("b".to_string(), vec_of(&e, "b")),
            ("c".to_string(), EmbeddingVector::new(vec![1.0; 4]).unwrap()),
        ];
        assert!(matches!(
            idx.upsert(bad),
            Err(IndexError::DimensionMismatch { expected: 8, got: 4 })
        ));
        assert_eq!(idx.len(), 1);
        let q = EmbeddingVector::new(vec![1.0; 4]).unwrap();
        assert!(idx.search_topk(&q, 1).is_err());
    }

    #[test]
    fn self_similarity_and_orthogonality() {
        let e = HashEmbedder::new(8);
        let mut idx = MemoryIndex::new(8);
        for s in ["x", "y", "z"] {
            idx.upsert(vec![(s.into(), vec_of(&e, s))]).unwrap();
        }
        let hits = idx.search_topk(&vec_of(&e, "y"), 2).unwrap();
        assert_eq!(hits[0].chunk_id, "y");
        assert!((hits[0].score - 1.0).abs() < 1e-9);

        let mut axes = MemoryIndex::new(3);
        axes.upsert(vec![
            ("a".into(), EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap()),
            ("b".into(), EmbeddingVector::new(vec![0.0, 1.0, 0.0]).unwrap()),
        ])
        .unwrap();
        let q = EmbeddingVector::new(vec![0.0, 0.0, 5.0]).unwrap();
        let hits = axes.search_topk(&q, 5).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.score.abs() < 1e-9));
        assert_eq!(hits[0].chunk_id, "a");
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = MemoryIndex::new(3);
        let q = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(idx.search_topk(&q, 10).unwrap().is_empty());
    }
}
