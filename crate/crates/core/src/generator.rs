//! Text-generator contract, prompt templates, and the HTTP and scripted
//! generator implementations.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::secret::Secret;

const DEFAULT_PROMPTS: &str = include_str!("../prompts/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("generator unavailable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("generator failed: {0}")]
    Failed(String),
    #[error("no scripted reply matches the prompt")]
    NoScript,
    #[error("invalid prompt file: {0}")]
    Prompts(String),
    #[error("invalid generator script: {0}")]
    Script(String),
}

/// A single chat-style completion request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub max_tokens: u32,
    pub temperature: f32,
}

/// Synchronous request/reply text generation.
pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<String, GenError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

/// The versioned prompt file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prompts {
    pub version: u32,
    pub variants: PromptTemplate,
    pub evidence: PromptTemplate,
    pub answer: PromptTemplate,
    pub completeness: PromptTemplate,
    pub refine: PromptTemplate,
    pub relation: PromptTemplate,
    pub reference_score: PromptTemplate,
    pub reference_task: PromptTemplate,
    pub raft_question: PromptTemplate,
    pub raft_answer: PromptTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTask {
    Variants,
    Evidence,
    Answer,
    Completeness,
    Refine,
    Relation,
    ReferenceScore,
    ReferenceTask,
    RaftQuestion,
    RaftAnswer,
}

impl Default for Prompts {
    fn default() -> Self {
        Self::parse(DEFAULT_PROMPTS).expect("bundled prompt file is valid")
    }
}

impl Prompts {
    pub fn parse(src: &str) -> Result<Self, GenError> {
        toml::from_str(src).map_err(|e| GenError::Prompts(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| GenError::Prompts(format!("{}: {e}", path.display())))?;
        Self::parse(&src)
    }

    pub fn template(&self, task: PromptTask) -> &PromptTemplate {
        match task {
            PromptTask::Variants => &self.variants,
            PromptTask::Evidence => &self.evidence,
            PromptTask::Answer => &self.answer,
            PromptTask::Completeness => &self.completeness,
            PromptTask::Refine => &self.refine,
            PromptTask::Relation => &self.relation,
            PromptTask::ReferenceScore => &self.reference_score,
            PromptTask::ReferenceTask => &self.reference_task,
            PromptTask::RaftQuestion => &self.raft_question,
            PromptTask::RaftAnswer => &self.raft_answer,
        }
    }
}

/// Substitutes `{name}` placeholders in a single pass, so substituted values
/// are never re-expanded.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// A generator bound to prompts, a model id and sampling parameters.
#[derive(Clone)]
pub struct GenerationHandle {
    generator: Arc<dyn Generator>,
    prompts: Arc<Prompts>,
    pub model: String,
    pub temperature: f32,
    pub retries: u32,
}

impl std::fmt::Debug for GenerationHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GenerationHandle")
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("retries", &self.retries)
            .finish_non_exhaustive()
    }
}

impl GenerationHandle {
    pub fn new(generator: Arc<dyn Generator>, prompts: Arc<Prompts>, model: impl Into<String>) -> Self {
        Self {
            generator,
            prompts,
            model: model.into(),
            temperature: 0.0,
            retries: 0,
        }
    }

    pub fn with_model(&self, model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            ..self.clone()
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub fn request(&self, task: PromptTask, vars: &[(&str, &str)], max_tokens: u32) -> GenRequest {
        let t = self.prompts.template(task);
        GenRequest {
            model: self.model.clone(),
            system: render(&t.system, vars),
            user: render(&t.user, vars),
            max_tokens,
            temperature: self.temperature,
        }
    }

    /// Renders `task` and calls the generator, retrying up to `retries` times.
    pub fn run(&self, task: PromptTask, vars: &[(&str, &str)], max_tokens: u32) -> Result<String, GenError> {
        let req = self.request(task, vars, max_tokens);
        let mut attempt = 0;
        loop {
            match self.generator.generate(&req) {
                Ok(reply) => return Ok(reply),
                Err(e) if attempt < self.retries => {
                    attempt += 1;
                    tracing::warn!(attempt, error = %e, ?task, "generator call failed, retrying");
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Settings for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpGeneratorConfig {
    pub base_url: String,
    pub api_key: Option<Secret>,
    pub timeout: Duration,
    pub retries: u32,
}

pub struct HttpGenerator {
    cfg: HttpGeneratorConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpGenerator")
            .field("base_url", &self.cfg.base_url)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    max_tokens: u32,
    temperature: f32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

impl HttpGenerator {
    pub fn new(cfg: HttpGeneratorConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Self { cfg, agent }
    }

    fn call_once(&self, req: &GenRequest) -> Result<String, String> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.cfg.api_key {
            call = call.header("Authorization", &format!("Bearer {}", key.expose()));
        }
        let body = ChatRequest {
            model: &req.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &req.system,
                },
                ChatMessage {
                    role: "user",
                    content: &req.user,
                },
            ],
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        };
        let mut resp = call.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => format!("http status {code}"),
            _ => "transport failure".to_string(),
        })?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|_| "malformed chat response".to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "empty chat response".to_string())
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &GenRequest) -> Result<String, GenError> {
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.call_once(req) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "chat request failed");
                    last = e;
                }
            }
        }
        Err(GenError::Transport {
            attempts,
            message: last,
        })
    }
}

/// One scripted reply: text, or a simulated failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Error { error: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Regex matched against `system + "\n" + user`.
    pub pattern: String,
    /// Restricts the rule to one model id.
    #[serde(default)]
    pub model: Option<String>,
    /// Served in order; the last reply repeats once the list is exhausted.
    pub replies: Vec<ScriptedReply>,
    #[serde(default)]
    pub latency_ms: u64,
}

/// Fixture file contents for [`ScriptedGenerator`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub latency_ms: u64,
}

struct CompiledRule {
    pattern: Regex,
    model: Option<String>,
    replies: Vec<ScriptedReply>,
    latency: Duration,
    served: AtomicUsize,
}

/// Offline generator that maps prompt patterns to canned replies.
///
/// Tracks in-flight and peak concurrent calls and records every request.
pub struct ScriptedGenerator {
    rules: Vec<CompiledRule>,
    default: Option<String>,
    latency: Duration,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: Mutex<Vec<GenRequest>>,
}

impl std::fmt::Debug for ScriptedGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedGenerator")
            .field("rules", &self.rules.len())
            .finish_non_exhaustive()
    }
}

impl ScriptedGenerator {
    pub fn new(script: Script) -> Result<Self, GenError> {
        let rules = script
            .rules
            .into_iter()
            .map(|r| {
                if r.replies.is_empty() {
                    return Err(GenError::Script(format!("rule {:?} has no replies", r.pattern)));
                }
                Ok(CompiledRule {
                    pattern: Regex::new(&r.pattern).map_err(|e| GenError::Script(e.to_string()))?,
                    model: r.model,
                    replies: r.replies,
                    latency: Duration::from_millis(r.latency_ms),
                    served: AtomicUsize::new(0),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            rules,
            default: script.default,
            latency: Duration::from_millis(script.latency_ms),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: Mutex::new(Vec::new()),
        })
    }

    pub fn from_json(src: &str) -> Result<Self, GenError> {
        let script: Script = serde_json::from_str(src).map_err(|e| GenError::Script(e.to_string()))?;
        Self::new(script)
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| GenError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&src)
    }

    /// Shorthand: `(pattern, replies)` rules with no latency.
    pub fn from_rules(rules: &[(&str, &[&str])]) -> Self {
        Self::new(Script {
            rules: rules
                .iter()
                .map(|(p, replies)| ScriptRule {
                    pattern: p.to_string(),
                    model: None,
                    replies: replies.iter().map(|r| ScriptedReply::Text(r.to_string())).collect(),
                    latency_ms: 0,
                })
                .collect(),
            default: None,
            latency_ms: 0,
        })
        .expect("valid inline script")
    }

    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> Vec<GenRequest> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }

    fn pick(&self, req: &GenRequest) -> Result<(ScriptedReply, Duration), GenError> {
        let haystack = format!("{}\n{}", req.system, req.user);
        for rule in &self.rules {
            if rule.model.as_ref().is_some_and(|m| *m != req.model) {
                continue;
            }
            if rule.pattern.is_match(&haystack) {
                let i = rule.served.fetch_add(1, Ordering::SeqCst);
                let reply = rule.replies[i.min(rule.replies.len() - 1)].clone();
                return Ok((reply, rule.latency));
            }
        }
        match &self.default {
            Some(d) => Ok((ScriptedReply::Text(d.clone()), Duration::ZERO)),
            None => Err(GenError::NoScript),
        }
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, req: &GenRequest) -> Result<String, GenError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.lock().expect("call log poisoned").push(req.clone());
        let (reply, latency) = self.pick(req)?;
        let delay = latency.max(self.latency);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        match reply {
            ScriptedReply::Text(t) => Ok(t),
            ScriptedReply::Error { error } => Err(GenError::Failed(error)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_once() {
        assert_eq!(
            render("Q: {question} ({n})", &[("question", "{n}?"), ("n", "3")]),
            "Q: {n}? (3)"
        );
        assert_eq!(render("keep {unknown} and {", &[]), "keep {unknown} and {");
    }

    #[test]
    fn bundled_prompts_parse_and_tag_tasks() {
        let p = Prompts::default();
        assert_eq!(p.version, 1);
        assert!(p.variants.user.starts_with("[task:variants]"));
        assert!(p.raft_answer.user.contains("####"));
    }

    #[test]
    fn scripted_sequences_repeat_last() {
        let g = ScriptedGenerator::from_rules(&[("task:completeness", &["no", "yes"])]);
        let h = GenerationHandle::new(Arc::new(g), Arc::new(Prompts::default()), "m");
        let vars = [("question", "q"), ("draft", "d")];
        let replies: Vec<_> = (0..3)
            .map(|_| h.run(PromptTask::Completeness, &vars, 10).unwrap())
            .collect();
        assert_eq!(replies, vec!["no", "yes", "yes"]);
    }

    #[test]
    fn scripted_errors_and_model_filter() {
        let g = ScriptedGenerator::from_json(
            r#"{"rules": [
                {"pattern": "task:answer", "model": "ft", "replies": ["tuned"]},
                {"pattern": "task:answer", "replies": [{"error": "boom"}, "base"]}
            ]}"#,
        )
        .unwrap();
        let h = GenerationHandle::new(Arc::new(g), Arc::new(Prompts::default()), "base-model");
        let vars = [("question", "q"), ("budget", "5"), ("evidence", "")];
        assert!(matches!(h.run(PromptTask::Answer, &vars, 5), Err(GenError::Failed(m)) if m == "boom"));
        assert_eq!(h.run(PromptTask::Answer, &vars, 5).unwrap(), "base");
        assert_eq!(h.with_model("ft").run(PromptTask::Answer, &vars, 5).unwrap(), "tuned");
    }

    #[test]
    fn retries_consume_failures() {
        let g = ScriptedGenerator::new(Script {
            rules: vec![ScriptRule {
                pattern: "task:refine".into(),
                model: None,
                replies: vec![
                    ScriptedReply::Error { error: "x".into() },
                    ScriptedReply::Text("ok".into()),
                ],
                latency_ms: 0,
            }],
            ..Script::default()
        })
        .unwrap();
        let h = GenerationHandle::new(Arc::new(g), Arc::new(Prompts::default()), "m").with_retries(1);
        assert_eq!(h.run(PromptTask::Refine, &[], 5).unwrap(), "ok");
    }

    #[test]
    fn unmatched_prompt_without_default() {
        let g = ScriptedGenerator::from_rules(&[]);
        let h = GenerationHandle::new(Arc::new(g), Arc::new(Prompts::default()), "m");
        assert!(matches!(h.run(PromptTask::Refine, &[], 5), Err(GenError::NoScript)));
    }

    #[test]
    fn http_generator_failure_hides_key() {
        let g = HttpGenerator::new(HttpGeneratorConfig {
            base_url: "http://127.0.0.1:9".into(),
            api_key: Some(Secret::new("sk-very-secret")),
            timeout: Duration::from_millis(200),
            retries: 1,
        });
        let h = GenerationHandle::new(Arc::new(g), Arc::new(Prompts::default()), "m");
        let err = h.run(PromptTask::Refine, &[], 5).unwrap_err();
        assert!(matches!(err, GenError::Transport { attempts: 2, .. }));
        assert!(!err.to_string().contains("sk-very-secret"));
    }
}
