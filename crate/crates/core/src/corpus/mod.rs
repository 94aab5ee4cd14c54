//! Paper ingestion, chunking and on-disk corpus layout.

mod chunking;
mod import;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use chunking::{
    approx_tokens, chunk_document, plan_windows, reconstruct, Chunk, ChunkingConfig,
};
pub use import::{
    batch_import, batch_import_observed, label_from_url, split_pages, FetchError, FetchedDocument, Fetcher, HttpFetcher,
    ImportEntry, ImportManifest, ImportStatus,
};

/// Inserted between consecutive pages of `full_text`.
pub const PAGE_SEPARATOR: char = '\u{000C}';

const MANIFEST_FILE: &str = "manifest.json";
const DOCS_DIR: &str = "docs";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty document")]
    EmptyDocument,
    #[error("duplicate label: {0}")]
    DuplicateLabel(String),
    #[error("empty label")]
    EmptyLabel,
    #[error("empty url list")]
    EmptyUrlList,
    #[error("invalid chunking config: {0}")]
    InvalidConfig(String),
    #[error("unknown document: {0}")]
    UnknownDocument(String),
    #[error("corpus io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus record {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// An ingested paper: its pages, their concatenation and page boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source_uri: String,
    pub label: String,
    pub pages: Vec<String>,
    pub full_text: String,
    /// Byte offset where each page starts in `full_text`; strictly increasing.
    pub page_offsets: Vec<usize>,
    pub references_text: Option<String>,
    pub ingested_at: DateTime<Utc>,
}

impl Document {
    /// Builds a document from page texts. The id is derived from the label.
    pub fn from_pages(
        label: &str,
        source_uri: &str,
        pages: Vec<String>,
        references_text: Option<String>,
    ) -> Result<Self, CorpusError> {
        if label.trim().is_empty() {
            return Err(CorpusError::EmptyLabel);
        }
        if pages.is_empty() || pages.iter().all(|p| p.trim().is_empty()) {
            return Err(CorpusError::EmptyDocument);
        }
        let mut full_text = String::new();
        let mut page_offsets = Vec::with_capacity(pages.len());
        for (i, page) in pages.iter().enumerate() {
            if i > 0 {
                full_text.push(PAGE_SEPARATOR);
            }
            page_offsets.push(full_text.len());
            full_text.push_str(page);
        }
        Ok(Self {
            id: document_id(label),
            source_uri: source_uri.to_string(),
            label: label.to_string(),
            pages,
            full_text,
            page_offsets,
            references_text,
            ingested_at: Utc::now(),
        })
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    /// 1-based page containing byte `offset`. Separators belong to the page
    /// they follow.
    pub fn page_of_offset(&self, offset: usize) -> usize {
        self.page_offsets.partition_point(|&start| start <= offset).max(1)
    }

    /// Reference-section text if supplied separately, otherwise the full text.
    pub fn reference_source(&self) -> &str {
        self.references_text.as_deref().unwrap_or(&self.full_text)
    }
}

/// Stable document id: `d` followed by 12 hex digits of SHA-256(label).
pub fn document_id(label: &str) -> String {
    let digest = Sha256::digest(label.as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("d{hex}")
}

/// Input to [`Corpus::ingest`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DocumentInput {
    pub label: String,
    #[serde(default)]
    pub source_uri: String,
    pub pages: Vec<String>,
    #[serde(default)]
    pub references_text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    document: Document,
    chunks: Vec<Chunk>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    chunking: ChunkingConfig,
    documents: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: String,
}

/// Summary row for listing documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub id: String,
    pub label: String,
    pub source_uri: String,
    pub pages: usize,
    pub chunks: usize,
}

/// In-memory corpus. Callers serialize writes (the engine wraps it in a lock).
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    cfg: ChunkingConfig,
    docs: Vec<Document>,
    chunks: Vec<Vec<Chunk>>,
    by_id: HashMap<String, usize>,
    by_label: HashMap<String, usize>,
    chunk_pos: HashMap<String, (usize, usize)>,
}

impl Corpus {
    pub fn new(cfg: ChunkingConfig) -> Result<Self, CorpusError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            ..Self::default()
        })
    }

    pub fn chunking(&self) -> &ChunkingConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Ingests `pages` under `label`, chunking immediately.
    pub fn ingest_text(&mut self, label: &str, pages: Vec<String>) -> Result<&Document, CorpusError> {
        self.ingest(DocumentInput {
            label: label.to_string(),
            source_uri: String::new(),
            pages,
            references_text: None,
        })
    }

    pub fn ingest(&mut self, input: DocumentInput) -> Result<&Document, CorpusError> {
        let (doc, chunks) = self.prepare(input)?;
        self.commit(doc, chunks)
    }

    /// Builds and chunks a document without adding it, so callers can do
    /// fallible work (such as embedding) before [`Corpus::commit`].
    pub fn prepare(&self, input: DocumentInput) -> Result<(Document, Vec<Chunk>), CorpusError> {
        if self.by_label.contains_key(&input.label) {
            return Err(CorpusError::DuplicateLabel(input.label));
        }
        let doc = Document::from_pages(
            &input.label,
            &input.source_uri,
            input.pages,
            input.references_text,
        )?;
        if self.by_id.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateLabel(input.label));
        }
        let chunks = chunk_document(&doc, &self.cfg);
        Ok((doc, chunks))
    }

    pub fn commit(&mut self, doc: Document, chunks: Vec<Chunk>) -> Result<&Document, CorpusError> {
        if self.by_label.contains_key(&doc.label) || self.by_id.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateLabel(doc.label));
        }
        self.insert(doc, chunks);
        Ok(self.docs.last().expect("just inserted"))
    }

    fn insert(&mut self, doc: Document, chunks: Vec<Chunk>) {
        let di = self.docs.len();
        for (ci, c) in chunks.iter().enumerate() {
            self.chunk_pos.insert(c.id.clone(), (di, ci));
        }
        self.by_id.insert(doc.id.clone(), di);
        self.by_label.insert(doc.label.clone(), di);
        self.docs.push(doc);
        self.chunks.push(chunks);
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn document_by_label(&self, label: &str) -> Option<&Document> {
        self.by_label.get(label).map(|&i| &self.docs[i])
    }

    /// Looks a document up by id, falling back to label.
    pub fn resolve(&self, id_or_label: &str) -> Option<&Document> {
        self.document(id_or_label)
            .or_else(|| self.document_by_label(id_or_label))
    }

    pub fn chunks_of(&self, doc_id: &str) -> &[Chunk] {
        self.by_id
            .get(doc_id)
            .map(|&i| self.chunks[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_pos
            .get(chunk_id)
            .map(|&(d, c)| &self.chunks[d][c])
    }

    /// All chunks in document order.
    pub fn all_chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.iter().flatten()
    }

    pub fn chunk_count(&self) -> usize {
        self.chunk_pos.len()
    }

    pub fn summaries(&self) -> Vec<DocumentSummary> {
        self.docs
            .iter()
            .zip(&self.chunks)
            .map(|(d, c)| DocumentSummary {
                id: d.id.clone(),
                label: d.label.clone(),
                source_uri: d.source_uri.clone(),
                pages: d.page_count(),
                chunks: c.len(),
            })
            .collect()
    }

    /// Writes `manifest.json` plus one `docs/<id>.json` record per document.
    pub fn save_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        let docs_dir = dir.join(DOCS_DIR);
        fs::create_dir_all(&docs_dir).map_err(|source| CorpusError::Io {
            path: docs_dir.clone(),
            source,
        })?;
        for (doc, chunks) in self.docs.iter().zip(&self.chunks) {
            let path = docs_dir.join(format!("{}.json", doc.id));
            let record = DocumentRecord {
                document: doc.clone(),
                chunks: chunks.clone(),
            };
            write_json(&path, &record)?;
        }
        let manifest = ManifestFile {
            chunking: self.cfg,
            documents: self
                .docs
                .iter()
                .map(|d| ManifestEntry {
                    id: d.id.clone(),
                    label: d.label.clone(),
                })
                .collect(),
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    /// Loads a corpus directory. A directory without a manifest is an empty
    /// corpus with the given chunking config.
    pub fn load_dir(dir: &Path, default_cfg: ChunkingConfig) -> Result<Self, CorpusError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Self::new(default_cfg);
        }
        let manifest: ManifestFile = read_json(&manifest_path)?;
        let mut corpus = Self::new(manifest.chunking)?;
        for entry in manifest.documents {
            let path = dir.join(DOCS_DIR).join(format!("{}.json", entry.id));
            let record: DocumentRecord = read_json(&path)?;
            if record.document.id != entry.id || record.document.label != entry.label {
                return Err(CorpusError::Malformed {
                    path,
                    message: "record does not match manifest entry".into(),
                });
            }
            corpus.insert(record.document, record.chunks);
        }
        Ok(corpus)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    let body = serde_json::to_vec_pretty(value).map_err(|e| CorpusError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, body).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CorpusError> {
    let body = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&body).map_err(|e| CorpusError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
