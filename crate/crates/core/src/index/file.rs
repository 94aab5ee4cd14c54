use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use super::codec::{decode_record, parse_header, read_index_file, write_index_file, HEADER_LEN};
use super::{
    check_query, validate_batch, IndexBackendDescriptor, IndexError, SearchHit, VectorStore,
    BACKEND_FILE,
};
use crate::embed::EmbeddingVector;

/// Exact scan that streams records from the index file on every query.
///
/// Nothing but the entry count is kept in memory; upserts rewrite the file.
#[derive(Debug)]
pub struct FileIndex {
    path: PathBuf,
    dim: usize,
    count: usize,
}

impl FileIndex {
    /// Opens an existing index file (verifying its checksum) or creates an
    /// empty one.
    pub fn open_or_create(path: PathBuf, dim: usize) -> Result<Self, IndexError> {
        if path.exists() {
            let (file_dim, entries) = read_index_file(&path)?;
            if file_dim != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: file_dim,
                });
            }
            Ok(Self {
                path,
                dim,
                count: entries.len(),
            })
        } else {
            write_index_file(&path, dim, &[])?;
            Ok(Self {
                path,
                dim,
                count: 0,
            })
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl VectorStore for FileIndex {
    fn descriptor(&self) -> IndexBackendDescriptor {
        IndexBackendDescriptor {
            backend_name: BACKEND_FILE.to_string(),
            supports_persistence: true,
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.count
    }

    fn upsert(&mut self, entries: Vec<(String, EmbeddingVector)>) -> Result<usize, IndexError> {
        validate_batch(self.dim, &entries)?;
        if entries.is_empty() {
            return Ok(0);
        }
        let n = entries.len();
        let (_, mut existing) = read_index_file(&self.path)?;
        let mut position: std::collections::HashMap<String, usize> = existing
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        for (id, v) in entries {
            match position.get(&id) {
                Some(&i) => existing[i].1 = v,
                None => {
                    position.insert(id.clone(), existing.len());
                    existing.push((id, v));
                }
            }
        }
        write_index_file(&self.path, self.dim, &existing)?;
        self.count = existing.len();
        Ok(n)
    }

    fn search_topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        check_query(self.dim, query, k)?;
        let bytes = fs::read(&self.path)?;
        let header = parse_header(&bytes)?;
        let body = &bytes[HEADER_LEN..];
        let mut scored: Vec<(f64, String)> = Vec::with_capacity(header.count as usize);
        let mut pos = 0;
        for _ in 0..header.count {
            let ((id, values), next) = decode_record(body, pos, header.dim)?;
            let v = EmbeddingVector::new(values).map_err(|e| IndexError::Corrupt(e.to_string()))?;
            scored.push((query.cosine(&v), id));
            pos = next;
        }
        scored.sort_unstable_by(|a, b| match b.0.total_cmp(&a.0) {
            Ordering::Equal => a.1.cmp(&b.1),
            other => other,
        });
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (score, chunk_id))| SearchHit {
                chunk_id,
                score,
                rank: i + 1,
            })
            .collect())
    }

    fn entries(&self) -> Result<Vec<(String, EmbeddingVector)>, IndexError> {
        Ok(read_index_file(&self.path)?.1)
    }
}
