//! Retrieval-augmented question answering over scientific papers.
//!
//! The crate is organized bottom-up:
//!
//! - [`corpus`]: ingest page texts, split documents into span-addressed chunks,
//!   persist the corpus and batch-import papers by URL.
//! - [`embed`] and [`index`]: embedding providers and exact top-k cosine search
//!   over interchangeable vector-store backends.
//! - [`retrieval`]: basic retrieval and multi-query fusion via reciprocal rank fusion.
//! - [`generator`]: the text-generator contract, HTTP and scripted implementations,
//!   and the versioned prompt file.
//! - [`agent`]: the search / gather-evidence / answer loop with grounded citations.
//! - [`refgraph`]: reference extraction, top-k reference ranking and Mermaid output.
//! - [`raft`]: fine-tuning records with oracle and distractor chunks.
//! - [`eval`]: precision, recall, F1, latency and method/backend comparison tables.
//! - [`engine`]: wires everything behind a single read/write-locked handle.
//!
//! Data-parallel loops go through [`parallel`], which falls back to sequential
//! execution when the `parallel` feature is disabled.

pub mod agent;
pub mod corpus;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod generator;
pub mod index;
pub mod parallel;
pub mod raft;
pub mod refgraph;
pub mod retrieval;
pub mod secret;

pub use agent::{Answer, Citation, Evidence};
pub use corpus::{Chunk, ChunkingConfig, Corpus, Document, ImportManifest};
pub use embed::{Embedder, EmbeddingVector, HashEmbedder};
pub use engine::{Engine, EngineError, EngineSettings};
pub use generator::{GenerationHandle, Generator, Prompts, ScriptedGenerator};
pub use index::{SearchHit, VectorStore};
pub use retrieval::{FusedRanking, Query, RankedList, RetrievalConfig};
