//! Service configuration: one TOML file plus environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use docent_core::agent::AgentConfig;
use docent_core::embed::{Embedder, HashEmbedder, HttpEmbedder, HttpEmbedderConfig, HASH_EMBEDDER_DIM};
use docent_core::generator::{Generator, HttpGenerator, HttpGeneratorConfig, Prompts, ScriptedGenerator};
use docent_core::index::REGISTERED_BACKENDS;
use docent_core::secret::Secret;
use docent_core::{ChunkingConfig, Engine, EngineError, EngineSettings, GenerationHandle, RetrievalConfig};
use serde::Deserialize;

pub const ENV_API_KEY: &str = "PROVIDER_API_KEY";
pub const ENV_BASE_URL: &str = "PROVIDER_BASE_URL";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Scripted,
    #[default]
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub kind: GeneratorKind,
    pub base_url: String,
    /// Reply script for the scripted generator.
    pub script: Option<PathBuf>,
    pub model: String,
    pub finetuned_model: Option<String>,
    pub api_key: Option<Secret>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Http,
            base_url: "http://127.0.0.1:8000/v1".into(),
            script: None,
            model: "base".into(),
            finetuned_model: None,
            api_key: None,
            timeout_secs: 60,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSettings {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub base_url: String,
    pub model: String,
    pub api_key: Option<Secret>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dim: HASH_EMBEDDER_DIM,
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "embedding".into(),
            api_key: None,
            timeout_secs: 60,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub max_iterations: usize,
    pub evidence_per_iteration: usize,
    pub answer_token_budget: u32,
    pub relevance_threshold: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        let d = AgentConfig::default();
        Self {
            max_iterations: d.max_iterations,
            evidence_per_iteration: d.evidence_per_iteration,
            answer_token_budget: d.answer_token_budget,
            relevance_threshold: d.relevance_threshold,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefGraphSettings {
    pub k: usize,
    pub rescore: bool,
}

impl Default for RefGraphSettings {
    fn default() -> Self {
        Self { k: 10, rescore: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub data_dir: PathBuf,
    pub backend: String,
    pub shards: Option<usize>,
    /// Prompt file; the bundled prompts are used when absent.
    pub prompts: Option<PathBuf>,
    /// Bound on concurrent provider calls, fetches and variant retrievals.
    pub concurrency: usize,
    pub fetch_timeout_secs: u64,
    pub generator: GeneratorSettings,
    pub embedder: EmbedderSettings,
    pub retrieval: RetrievalConfig,
    pub agent: AgentSettings,
    pub chunking: ChunkingConfig,
    pub refgraph: RefGraphSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_address: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("docent-data"),
            backend: docent_core::index::BACKEND_IN_MEMORY.into(),
            shards: None,
            prompts: None,
            concurrency: docent_core::parallel::DEFAULT_CONCURRENCY,
            fetch_timeout_secs: 30,
            generator: GeneratorSettings::default(),
            embedder: EmbedderSettings::default(),
            retrieval: RetrievalConfig::default(),
            agent: AgentSettings::default(),
            chunking: ChunkingConfig::default(),
            refgraph: RefGraphSettings::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ServiceConfig {
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        toml::from_str(src).map_err(|e| ConfigError::Invalid(e.message().to_string()))
    }

    /// Reads `path`, resolves relative paths against its directory and
    /// applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        if !path.is_file() {
            return Err(ConfigError::NotFound(path.to_path_buf()));
        }
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::parse(&src)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    /// Defaults plus environment overrides, for runs without a file.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data_dir);
        if let Some(p) = self.prompts.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = self.generator.script.as_mut() {
            resolve(base, p);
        }
    }

    /// Credentials and the provider URL come from the environment when set.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(key) = lookup(ENV_API_KEY).filter(|k| !k.is_empty()) {
            self.generator.api_key = Some(Secret::new(key.clone()));
            self.embedder.api_key = Some(Secret::new(key));
        }
        if let Some(url) = lookup(ENV_BASE_URL).filter(|u| !u.is_empty()) {
            self.generator.base_url = url.clone();
            self.embedder.base_url = url;
        }
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.listen_address
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("listen_address {:?} does not parse", self.listen_address)))
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            max_iterations: self.agent.max_iterations,
            evidence_per_iteration: self.agent.evidence_per_iteration,
            answer_token_budget: self.agent.answer_token_budget,
            relevance_threshold: self.agent.relevance_threshold,
            concurrency: self.concurrency,
            retrieval: RetrievalConfig {
                concurrency: self.concurrency,
                ..self.retrieval
            },
            ..AgentConfig::default()
        }
    }

    pub fn engine_settings(&self) -> EngineSettings {
        EngineSettings {
            chunking: self.chunking,
            backend: self.backend.clone(),
            shards: self.shards,
            agent: self.agent_config(),
            import_concurrency: self.concurrency,
            refgraph_k: self.refgraph.k,
            refgraph_rescore: self.refgraph.rescore,
        }
    }

    /// Checks every field without touching the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen_addr()?;
        if self.retrieval.k == 0 {
            return Err(ConfigError::Invalid("retrieval.k must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if self.refgraph.k == 0 {
            return Err(ConfigError::Invalid("refgraph.k must be at least 1".into()));
        }
        if !REGISTERED_BACKENDS.contains(&self.backend.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown backend {:?} (expected one of {})",
                self.backend,
                REGISTERED_BACKENDS.join(", ")
            )));
        }
        self.chunking
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.agent_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.generator.kind == GeneratorKind::Scripted && self.generator.script.is_none() {
            return Err(ConfigError::Invalid("generator.script is required for the scripted generator".into()));
        }
        if self.embedder.dim == 0 {
            return Err(ConfigError::Invalid("embedder.dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn embedder(&self) -> Arc<dyn Embedder> {
        let e = &self.embedder;
        match e.kind {
            EmbedderKind::Hash => Arc::new(HashEmbedder::new(e.dim)),
            EmbedderKind::Http => Arc::new(HttpEmbedder::new(HttpEmbedderConfig {
                base_url: e.base_url.clone(),
                model: e.model.clone(),
                dim: e.dim,
                api_key: e.api_key.clone(),
                timeout: Duration::from_secs(e.timeout_secs),
                retries: e.retries,
            })),
        }
    }

    pub fn generation_handle(&self) -> Result<GenerationHandle, ConfigError> {
        let g = &self.generator;
        let generator: Arc<dyn Generator> = match g.kind {
            GeneratorKind::Scripted => {
                let path = g
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("generator.script is required".into()))?;
                Arc::new(ScriptedGenerator::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
            GeneratorKind::Http => Arc::new(HttpGenerator::new(HttpGeneratorConfig {
                base_url: g.base_url.clone(),
                api_key: g.api_key.clone(),
                timeout: Duration::from_secs(g.timeout_secs),
                retries: g.retries,
            })),
        };
        let prompts = match &self.prompts {
            Some(p) => Prompts::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => Prompts::default(),
        };
        Ok(GenerationHandle::new(generator, Arc::new(prompts), g.model.clone()))
    }

    /// Validates, creates the data directory and opens the engine on it.
    pub fn open_engine(&self) -> Result<Engine, ConfigError> {
        self.validate()?;
        std::fs::create_dir_all(&self.data_dir).map_err(|e| {
            ConfigError::Invalid(format!("cannot create data_dir {}: {e}", self.data_dir.display()))
        })?;
        Ok(Engine::open(
            self.engine_settings(),
            self.embedder(),
            self.generation_handle()?,
            Some(&self.data_dir),
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ServiceConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_sections_and_resolves_paths() {
        let mut cfg = ServiceConfig::parse(
            r#"
            listen_address = "0.0.0.0:9000"
            data_dir = "data"
            backend = "file-backed"
            [generator]
            kind = "scripted"
            script = "script.json"
            finetuned_model = "tuned"
            [retrieval]
            k = 5
            [chunking]
            chunk_size_tokens = 100
            overlap_tokens = 10
            "#,
        )
        .unwrap();
        cfg.resolve_paths(Path::new("/etc/docent"));
        assert_eq!(cfg.data_dir, PathBuf::from("/etc/docent/data"));
        assert_eq!(cfg.generator.script, Some(PathBuf::from("/etc/docent/script.json")));
        assert_eq!(cfg.retrieval.k, 5);
        assert_eq!(cfg.retrieval.n_variants, 4);
        assert_eq!(cfg.chunking.overlap_tokens, 10);
        assert_eq!(cfg.agent_config().retrieval.k, 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |src: &str| ServiceConfig::parse(src).and_then(|c| c.validate()).unwrap_err().to_string();
        assert!(bad("listen_address = \"nowhere\"").contains("does not parse"));
        assert!(bad("[retrieval]\nk = 0").contains("k must be at least 1"));
        assert!(bad("backend = \"faiss\"").contains("unknown backend"));
        assert!(bad("[generator]\nkind = \"scripted\"").contains("generator.script"));
        assert!(bad("surprise = 1").contains("unknown field"));
    }

    #[test]
    fn missing_file() {
        let err = ServiceConfig::load(Path::new("/nonexistent/missing.conf")).unwrap_err();
        assert!(err.to_string().starts_with("config not found"));
    }

    #[test]
    fn env_overrides_provider_settings() {
        let mut cfg = ServiceConfig::default();
        cfg.apply_env(|k| match k {
            ENV_API_KEY => Some("sk-env".into()),
            ENV_BASE_URL => Some("http://provider/v1".into()),
            _ => None,
        });
        assert_eq!(cfg.generator.api_key.as_ref().unwrap().expose(), "sk-env");
        assert_eq!(cfg.embedder.base_url, "http://provider/v1");
        assert!(!format!("{cfg:?}").contains("sk-env"));
    }
}
