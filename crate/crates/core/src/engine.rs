//! One handle over corpus, index, embedder and generator.
//!
//! Reads (ask, refgraph, evaluation) share read locks; ingestion takes the
//! write locks, embeds before touching either structure, and leaves both
//! unchanged on failure.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};

use crate::agent::{run_agent, AgentConfig, AgentContext, AgentError, Answer};
use crate::corpus::{
    batch_import_observed, ChunkingConfig, Corpus, CorpusError, DocumentInput, DocumentSummary, Fetcher,
    ImportManifest,
};
use crate::embed::{embed_batch, EmbedError, Embedder};
use crate::eval::{run_comparison, EvalConfig, EvalContext, EvalError, EvalItem, EvalReport};
use crate::generator::{GenError, GenerationHandle};
use crate::index::{
    copy_into, load_index, open_backend, save_index, BackendOptions, IndexError, VectorStore,
    BACKEND_FILE, BACKEND_IN_MEMORY,
};
use crate::parallel;
use crate::raft::{build_records, RaftBuild, RaftConfig, RaftError};
use crate::refgraph::{reference_graph, RefGraphError, RefGraphOptions, RefGraphOutput};
use crate::retrieval::{Query, RetrievalError};

pub const CORPUS_DIR: &str = "corpus";
pub const INDEX_FILE: &str = "index.rgdx";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("no papers ingested")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    RefGraph(#[from] RefGraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Raft(#[from] RaftError),
}

fn gen_is_upstream(e: &GenError) -> bool {
    matches!(e, GenError::Transport { .. } | GenError::Failed(_) | GenError::NoScript)
}

fn retrieval_is_upstream(e: &RetrievalError) -> bool {
    matches!(e, RetrievalError::Embed(EmbedError::Transport { .. }))
}

impl EngineError {
    /// True when an embedding or generation provider failed, as opposed to
    /// bad input or local state.
    pub fn is_upstream(&self) -> bool {
        match self {
            Self::Embed(e) => e.is_retryable(),
            Self::Retrieval(e) => retrieval_is_upstream(e),
            Self::Agent(AgentError::Generator(g)) => gen_is_upstream(g),
            Self::Agent(AgentError::ProviderOutage(_)) => true,
            Self::Agent(AgentError::Retrieval(r)) => retrieval_is_upstream(r),
            Self::RefGraph(RefGraphError::Embed(e)) => e.is_retryable(),
            Self::Eval(EvalError::Agent(AgentError::Generator(g))) => gen_is_upstream(g),
            Self::Eval(EvalError::Retrieval(r)) => retrieval_is_upstream(r),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    pub chunking: ChunkingConfig,
    pub backend: String,
    pub shards: Option<usize>,
    pub agent: AgentConfig,
    pub import_concurrency: usize,
    pub refgraph_k: usize,
    pub refgraph_rescore: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            chunking: ChunkingConfig::default(),
            backend: BACKEND_IN_MEMORY.to_string(),
            shards: None,
            agent: AgentConfig::default(),
            import_concurrency: parallel::DEFAULT_CONCURRENCY,
            refgraph_k: 10,
            refgraph_rescore: false,
        }
    }
}

pub struct Engine {
    settings: EngineSettings,
    data_dir: Option<PathBuf>,
    corpus: RwLock<Corpus>,
    index: RwLock<Box<dyn VectorStore>>,
    embedder: Arc<dyn Embedder>,
    llm: GenerationHandle,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("settings", &self.settings)
            .field("data_dir", &self.data_dir)
            .finish_non_exhaustive()
    }
}

fn read<T: ?Sized>(lock: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|p| p.into_inner())
}

impl Engine {
    /// Opens an engine. With a data directory, an existing corpus and index
    /// are loaded from it and every change is persisted back; a missing or
    /// stale index is rebuilt from the corpus.
    pub fn open(
        settings: EngineSettings,
        embedder: Arc<dyn Embedder>,
        llm: GenerationHandle,
        data_dir: Option<&Path>,
    ) -> Result<Self, EngineError> {
        settings.agent.validate()?;
        let dim = embedder.dim();
        let corpus = match data_dir {
            Some(dir) if dir.join(CORPUS_DIR).join("manifest.json").exists() => {
                Corpus::load_dir(&dir.join(CORPUS_DIR), settings.chunking)?
            }
            _ => Corpus::new(settings.chunking)?,
        };
        let index_path = data_dir.map(|d| d.join(INDEX_FILE));
        let opts = BackendOptions {
            path: index_path.clone(),
            shards: settings.shards,
        };
        let mut index = if settings.backend == BACKEND_FILE {
            open_backend(BACKEND_FILE, dim, &opts)?
        } else {
            let mut store = open_backend(&settings.backend, dim, &opts)?;
            if let Some(p) = index_path.as_ref().filter(|p| p.exists()) {
                let (saved, _) = load_index(p)?;
                if saved.dim() == dim {
                    copy_into(&saved, store.as_mut())?;
                }
            }
            store
        };
        if index.len() != corpus.chunk_count() || index.dim() != dim {
            tracing::info!(chunks = corpus.chunk_count(), "rebuilding index");
            if let Some(p) = index_path.as_ref().filter(|p| p.exists()) {
                std::fs::remove_file(p).map_err(IndexError::Io)?;
            }
            index = open_backend(&settings.backend, dim, &opts)?;
            let chunks: Vec<_> = corpus.all_chunks().cloned().collect();
            let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
            let vectors = embed_batch(&texts, embedder.as_ref())?;
            index.upsert(chunks.into_iter().map(|c| c.id).zip(vectors).collect())?;
        }
        let engine = Self {
            settings,
            data_dir: data_dir.map(Path::to_path_buf),
            corpus: RwLock::new(corpus),
            index: RwLock::new(index),
            embedder,
            llm,
        };
        engine.persist()?;
        Ok(engine)
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn generator(&self) -> &GenerationHandle {
        &self.llm
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn corpus(&self) -> RwLockReadGuard<'_, Corpus> {
        read(&self.corpus)
    }

    pub fn index(&self) -> RwLockReadGuard<'_, Box<dyn VectorStore>> {
        read(&self.index)
    }

    pub fn summaries(&self) -> Vec<DocumentSummary> {
        self.corpus().summaries()
    }

    /// Writes corpus and index to the data directory, if one is set.
    pub fn persist(&self) -> Result<(), EngineError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let corpus = self.corpus();
        let index = self.index();
        corpus.save_dir(&dir.join(CORPUS_DIR))?;
        save_index(index.as_ref(), &dir.join(INDEX_FILE))?;
        Ok(())
    }

    fn ingest_unpersisted(&self, input: DocumentInput) -> Result<DocumentSummary, EngineError> {
        let mut corpus = self.corpus.write().unwrap_or_else(|p| p.into_inner());
        let (doc, chunks) = corpus.prepare(input)?;
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embed_batch(&texts, self.embedder.as_ref())?;
        let mut index = self.index.write().unwrap_or_else(|p| p.into_inner());
        index.upsert(chunks.iter().map(|c| c.id.clone()).zip(vectors).collect())?;
        let id = corpus.commit(doc, chunks)?.id.clone();
        Ok(corpus
            .summaries()
            .into_iter()
            .find(|s| s.id == id)
            .expect("committed document is listed"))
    }

    pub fn ingest(&self, input: DocumentInput) -> Result<DocumentSummary, EngineError> {
        let summary = self.ingest_unpersisted(input)?;
        self.persist()?;
        Ok(summary)
    }

    /// Fetches and ingests each URL; failures are recorded per entry.
    pub fn batch_import(&self, urls: &[String], fetcher: &dyn Fetcher) -> Result<ImportManifest, EngineError> {
        self.batch_import_observed(urls, fetcher, |_| {})
    }

    /// [`Engine::batch_import`] reporting the manifest as entries settle.
    pub fn batch_import_observed(
        &self,
        urls: &[String],
        fetcher: &dyn Fetcher,
        observe: impl FnMut(&ImportManifest),
    ) -> Result<ImportManifest, EngineError> {
        let manifest = batch_import_observed(
            urls,
            fetcher,
            self.settings.import_concurrency,
            |d| {
                self.ingest_unpersisted(DocumentInput {
                    label: d.label,
                    source_uri: d.source_uri,
                    pages: d.pages,
                    references_text: None,
                })
                .map(|s| s.id)
            },
            observe,
        )?;
        self.persist()?;
        Ok(manifest)
    }

    pub fn ask(&self, question: &str) -> Result<Answer, EngineError> {
        self.ask_with(question, &self.settings.agent)
    }

    pub fn ask_with(&self, question: &str, cfg: &AgentConfig) -> Result<Answer, EngineError> {
        self.ask_with_model(question, cfg, None)
    }

    /// Like [`Engine::ask_with`], answering with `model` instead of the
    /// configured model id when one is given.
    pub fn ask_with_model(
        &self,
        question: &str,
        cfg: &AgentConfig,
        model: Option<&str>,
    ) -> Result<Answer, EngineError> {
        let q = Query::new(question)?;
        let llm = match model {
            Some(m) => self.llm.with_model(m),
            None => self.llm.clone(),
        };
        let corpus = self.corpus();
        if corpus.is_empty() {
            return Err(EngineError::EmptyCorpus);
        }
        let index = self.index();
        let ctx = AgentContext {
            corpus: &corpus,
            retriever: crate::retrieval::Retriever::new(index.as_ref(), self.embedder.as_ref()),
            llm: &llm,
        };
        Ok(run_agent(&ctx, &q, cfg)?)
    }

    pub fn refgraph(&self, doc: &str, k: Option<usize>) -> Result<RefGraphOutput, EngineError> {
        let opts = RefGraphOptions {
            k: k.unwrap_or(self.settings.refgraph_k),
            rescore: self.settings.refgraph_rescore,
            label_relations: true,
            concurrency: self.settings.agent.concurrency,
        };
        Ok(reference_graph(&self.corpus(), doc, self.embedder.as_ref(), Some(&self.llm), &opts)?)
    }

    pub fn evaluate<S: AsRef<str>>(
        &self,
        items: &[EvalItem],
        methods: &[S],
        cfg: &EvalConfig,
    ) -> Result<EvalReport, EngineError> {
        let corpus = self.corpus();
        let index = self.index();
        let ctx = EvalContext {
            corpus: &corpus,
            store: index.as_ref(),
            embedder: self.embedder.as_ref(),
            llm: &self.llm,
        };
        Ok(run_comparison(items, methods, &ctx, cfg)?)
    }

    pub fn raft(&self, cfg: &RaftConfig) -> Result<RaftBuild, EngineError> {
        Ok(build_records(&self.corpus(), cfg, &self.llm)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::generator::{Prompts, ScriptedGenerator};
    use crate::index::BACKEND_SHARDED;

    fn llm() -> GenerationHandle {
        GenerationHandle::new(
            Arc::new(ScriptedGenerator::from_rules(&[
                ("task:evidence", &["score: 0.9, summary: about alpha"]),
                ("task:answer", &["Alpha holds (paper1, page 1)."]),
                ("task:completeness", &["yes"]),
            ])),
            Arc::new(Prompts::default()),
            "base",
        )
    }

    fn input(label: &str, pages: &[&str]) -> DocumentInput {
        DocumentInput {
            label: label.into(),
            pages: pages.iter().map(|p| p.to_string()).collect(),
            ..DocumentInput::default()
        }
    }

    #[test]
    fn ask_on_empty_corpus() {
        let e = Engine::open(EngineSettings::default(), Arc::new(HashEmbedder::default()), llm(), None).unwrap();
        let err = e.ask("anything").unwrap_err();
        assert_eq!(err.to_string(), "no papers ingested");
        assert!(!err.is_upstream());
    }

    #[test]
    fn ingest_then_ask() {
        let e = Engine::open(EngineSettings::default(), Arc::new(HashEmbedder::default()), llm(), None).unwrap();
        let s = e.ingest(input("paper1", &["alpha text", "beta text"])).unwrap();
        assert_eq!(s.pages, 2);
        assert_eq!(e.index().len(), e.corpus().chunk_count());
        let a = e.ask("alpha").unwrap();
        assert!(a.complete);
        assert_eq!(a.citations[0].doc_label, "paper1");
        assert!(matches!(
            e.ingest(input("paper1", &["again"])),
            Err(EngineError::Corpus(CorpusError::DuplicateLabel(_)))
        ));
        assert_eq!(e.summaries().len(), 1);
    }

    #[test]
    fn model_override_reaches_the_generator() {
        let scripted = Arc::new(ScriptedGenerator::from_rules(&[
            ("task:evidence", &["score: 0.9, summary: about alpha"]),
            ("task:answer", &["Alpha holds (paper1, page 1)."]),
            ("task:completeness", &["yes"]),
        ]));
        let handle = GenerationHandle::new(scripted.clone(), Arc::new(Prompts::default()), "base");
        let e = Engine::open(EngineSettings::default(), Arc::new(HashEmbedder::default()), handle, None).unwrap();
        e.ingest(input("paper1", &["alpha text"])).unwrap();
        e.ask_with_model("alpha", &AgentConfig::default(), Some("tuned")).unwrap();
        assert!(scripted.calls().iter().all(|c| c.model == "tuned"));
        e.ask("alpha").unwrap();
        assert_eq!(scripted.calls().last().unwrap().model, "base");
    }

    struct Broken;
    impl Embedder for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn dim(&self) -> usize {
            4
        }
        fn embed_raw(&self, _: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
            Err(EmbedError::Transport {
                attempts: 1,
                message: "down".into(),
            })
        }
    }

    #[test]
    fn failed_embedding_leaves_state_unchanged() {
        let e = Engine::open(EngineSettings::default(), Arc::new(Broken), llm(), None).unwrap();
        let err = e.ingest(input("p", &["text"])).unwrap_err();
        assert!(err.is_upstream());
        assert!(e.corpus().is_empty());
        assert!(e.index().is_empty());
    }

    #[test]
    fn persists_and_reopens_for_each_backend() {
        for backend in [BACKEND_IN_MEMORY, BACKEND_FILE, BACKEND_SHARDED] {
            let dir = tempfile::tempdir().unwrap();
            let settings = EngineSettings {
                backend: backend.into(),
                ..EngineSettings::default()
            };
            let emb: Arc<dyn Embedder> = Arc::new(HashEmbedder::default());
            {
                let e = Engine::open(settings.clone(), emb.clone(), llm(), Some(dir.path())).unwrap();
                e.ingest(input("paper1", &["alpha text", "beta text"])).unwrap();
                e.ingest(input("paper2", &["gamma"])).unwrap();
            }
            let e = Engine::open(settings.clone(), emb.clone(), llm(), Some(dir.path())).unwrap();
            assert_eq!(e.summaries().len(), 2, "{backend}");
            assert_eq!(e.index().len(), e.corpus().chunk_count(), "{backend}");
            assert!(e.ask("alpha").unwrap().complete);

            std::fs::remove_file(dir.path().join(INDEX_FILE)).unwrap();
            let e = Engine::open(settings, emb, llm(), Some(dir.path())).unwrap();
            assert_eq!(e.index().len(), e.corpus().chunk_count(), "{backend} rebuilt");
        }
    }
}
