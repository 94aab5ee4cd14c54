//! Token-window chunking with exact character coverage.
//!
//! Windows are planned over whitespace-delimited words. Configured sizes are
//! in approximate tokens (one word ~ 1.3 tokens) and converted to word counts
//! with integer arithmetic so the conversion is exact and platform-stable.

use serde::{Deserialize, Serialize};

use super::{CorpusError, Document};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub chunk_size_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size_tokens: 512,
            overlap_tokens: 64,
        }
    }
}

impl ChunkingConfig {
    pub fn new(chunk_size_tokens: usize, overlap_tokens: usize) -> Result<Self, CorpusError> {
        let cfg = Self {
            chunk_size_tokens,
            overlap_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_size_tokens == 0 {
            return Err(CorpusError::InvalidConfig(
                "chunk_size_tokens must be positive".into(),
            ));
        }
        if self.overlap_tokens >= self.chunk_size_tokens {
            return Err(CorpusError::InvalidConfig(
                "overlap_tokens must be smaller than chunk_size_tokens".into(),
            ));
        }
        Ok(())
    }

    /// Window size and overlap in words: `words = tokens * 10 / 13`, window at
    /// least one word, overlap strictly below the window.
    pub fn word_window(&self) -> (usize, usize) {
        let size = tokens_to_words(self.chunk_size_tokens).max(1);
        let overlap = tokens_to_words(self.overlap_tokens).min(size - 1);
        (size, overlap)
    }
}

fn tokens_to_words(tokens: usize) -> usize {
    tokens * 10 / 13
}

/// Approximate token count for `words` whitespace-delimited words (ceil of ×1.3).
pub fn approx_tokens(words: usize) -> usize {
    (words * 13).div_ceil(10)
}

/// Span-addressed piece of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    /// 1-based page containing `char_span.0`.
    pub page: usize,
    /// Half-open byte range into the document's `full_text`.
    pub char_span: (usize, usize),
    pub text: String,
    pub approx_tokens: usize,
}

impl Chunk {
    pub fn start(&self) -> usize {
        self.char_span.0
    }

    pub fn end(&self) -> usize {
        self.char_span.1
    }
}

/// Plans word windows `[start, end)` over `n_units` units.
///
/// Windows advance by `size - overlap` and stop at the first window that
/// reaches the end, giving `ceil(max(n - overlap, 1) / (size - overlap))` windows.
pub fn plan_windows(n_units: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    assert!(size > 0 && overlap < size, "invalid window parameters");
    let stride = size - overlap;
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + size).min(n_units);
        windows.push((start, end));
        if end >= n_units {
            break;
        }
        start += stride;
    }
    windows
}

/// Byte offsets where each whitespace-delimited word starts.
fn word_starts(text: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut in_word = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            in_word = false;
        } else if !in_word {
            starts.push(i);
            in_word = true;
        }
    }
    starts
}

/// Splits a document into overlapping chunks that together cover `full_text`.
///
/// A chunk spans from the start of its first word to the start of the word
/// after its last one, so inter-word whitespace belongs to the preceding
/// chunk; leading whitespace belongs to the first chunk and trailing
/// whitespace to the last.
pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Vec<Chunk> {
    let text = doc.full_text.as_str();
    let starts = word_starts(text);
    let (size, overlap) = cfg.word_window();
    let n = starts.len();

    plan_windows(n, size, overlap)
        .into_iter()
        .enumerate()
        .map(|(seq, (ws, we))| {
            let start = if ws == 0 { 0 } else { starts[ws] };
            let end = if we >= n { text.len() } else { starts[we] };
            Chunk {
                id: format!("{}-{:05}", doc.id, seq),
                doc_id: doc.id.clone(),
                page: doc.page_of_offset(start),
                char_span: (start, end),
                text: text[start..end].to_string(),
                approx_tokens: approx_tokens(we - ws),
            }
        })
        .collect()
}

/// Rebuilds the source text by dropping each chunk's leading overlap with its
/// predecessor.
pub fn reconstruct(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    let mut covered = 0usize;
    for chunk in chunks {
        let skip = covered.saturating_sub(chunk.start()).min(chunk.text.len());
        out.push_str(&chunk.text[skip..]);
        covered = covered.max(chunk.end());
    }
    out
}
