//! Fine-tuning records that pair a question with its oracle chunk and
//! distractor chunks from other documents, exported as chat-format JSONL.
//!
//! The record layout is documented in `docs/raft_schema.md`.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, Corpus};
use crate::generator::{GenerationHandle, PromptTask};
use crate::parallel;

/// Marks the final answer line of a chain-of-thought answer.
pub const ANSWER_MARKER: &str = "####";
pub const RAFT_SYSTEM_PROMPT: &str =
    "Answer the question using the documents provided. Some documents may be irrelevant. Reason step by step and give the final answer after ####.";
const QUESTION_PREFIX: &str = "\n\nQuestion: ";

#[derive(Debug, thiserror::Error)]
pub enum RaftError {
    #[error("need at least 2 documents, found {0}")]
    TooFewDocuments(usize),
    #[error("insufficient distractor pool: required {required}, available {available}")]
    InsufficientPool { required: usize, available: usize },
    #[error("invalid raft config: {0}")]
    InvalidConfig(String),
    #[error("nothing to export")]
    NothingToExport,
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("{0}")]
    Generation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaftConfig {
    pub num_distractors: usize,
    pub oracle_fraction: f64,
    pub questions_per_chunk: usize,
    pub seed: u64,
    /// Upper bound on records built; `None` uses every chunk.
    pub max_records: Option<usize>,
    pub concurrency: usize,
}

impl Default for RaftConfig {
    fn default() -> Self {
        Self {
            num_distractors: 4,
            oracle_fraction: 0.8,
            questions_per_chunk: 1,
            seed: 42,
            max_records: None,
            concurrency: parallel::DEFAULT_CONCURRENCY,
        }
    }
}

impl RaftConfig {
    pub fn validate(&self) -> Result<(), RaftError> {
        if !(0.0..=1.0).contains(&self.oracle_fraction) {
            return Err(RaftError::InvalidConfig("oracle_fraction must be in [0, 1]".into()));
        }
        if self.questions_per_chunk == 0 {
            return Err(RaftError::InvalidConfig("questions_per_chunk must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(RaftError::InvalidConfig("concurrency must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaftRecord {
    pub question: String,
    pub oracle_chunk_ids: Vec<String>,
    pub distractor_chunk_ids: Vec<String>,
    pub context_block: String,
    pub cot_answer: String,
}

#[derive(Debug, Clone, Default)]
pub struct RaftBuild {
    pub records: Vec<RaftRecord>,
    pub warnings: Vec<String>,
}

/// Document id encoded in a chunk id (`<doc_id>-<seq>`).
pub fn doc_of_chunk_id(chunk_id: &str) -> &str {
    chunk_id.rsplit_once('-').map_or(chunk_id, |(d, _)| d)
}

fn clean_question(line: &str) -> &str {
    let t = line.trim().trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && t[digits..].starts_with(['.', ')']) {
        t[digits + 1..].trim_start()
    } else {
        t
    }
}

/// Asks for `n` questions answerable from `chunk`; blank and duplicate lines
/// are dropped and at most `n` are kept.
pub fn generate_questions(chunk: &Chunk, n: usize, llm: &GenerationHandle) -> Result<Vec<String>, RaftError> {
    if chunk.text.trim().is_empty() {
        return Err(RaftError::InvalidConfig(format!("chunk {} is empty", chunk.id)));
    }
    let n_str = n.to_string();
    let reply = llm
        .run(PromptTask::RaftQuestion, &[("n", &n_str), ("passage", &chunk.text)], 256)
        .map_err(|e| RaftError::Generation(e.to_string()))?;
    let mut seen = HashSet::new();
    let questions: Vec<String> = reply
        .lines()
        .map(clean_question)
        .filter(|q| !q.is_empty())
        .filter(|q| seen.insert(q.split_whitespace().collect::<Vec<_>>().join(" ")))
        .take(n)
        .map(str::to_string)
        .collect();
    Ok(questions)
}

/// Samples `m` chunks uniformly without replacement from documents other
/// than the oracle's. Candidates keep pool order before sampling, so the
/// result depends only on the pool, `m` and `seed`.
pub fn sample_distractors<'a>(oracle: &Chunk, pool: &'a [Chunk], m: usize, seed: u64) -> Result<Vec<&'a Chunk>, RaftError> {
    let candidates: Vec<&Chunk> = pool.iter().filter(|c| c.doc_id != oracle.doc_id).collect();
    if candidates.len() < m {
        return Err(RaftError::InsufficientPool {
            required: m,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, candidates.len(), m)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

pub fn document_tag(chunk_id: &str) -> String {
    format!("<DOCUMENT id=\"{chunk_id}\">")
}

/// Concatenates the chunks, each wrapped in a `<DOCUMENT id="...">` tag.
pub fn context_block(chunks: &[&Chunk]) -> String {
    chunks
        .iter()
        .map(|c| format!("{}\n{}\n</DOCUMENT>", document_tag(&c.id), c.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Per-record draws from the master generator, in draw order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordDraw {
    pub bernoulli: f64,
    pub distractor_seed: u64,
    pub shuffle_seed: u64,
}

impl RecordDraw {
    pub fn next(rng: &mut ChaCha8Rng) -> Self {
        Self {
            bernoulli: rng.random::<f64>(),
            distractor_seed: rng.random::<u64>(),
            shuffle_seed: rng.random::<u64>(),
        }
    }
}

struct Pending<'a> {
    oracle: &'a Chunk,
    question: String,
    record: RaftRecord,
}

/// Builds records for every chunk (in corpus order) and each of its
/// generated questions.
///
/// Draws from a ChaCha8 generator seeded with `cfg.seed` are taken once per
/// (chunk, question) pair in that order: a uniform f64 deciding whether the
/// oracle is included (`< oracle_fraction`), then the distractor seed, then
/// the context shuffle seed. Questions and answers are generated with
/// bounded concurrency; failures skip the record with a warning.
pub fn build_records(corpus: &Corpus, cfg: &RaftConfig, llm: &GenerationHandle) -> Result<RaftBuild, RaftError> {
    cfg.validate()?;
    if corpus.len() < 2 {
        return Err(RaftError::TooFewDocuments(corpus.len()));
    }
    let pool: Vec<Chunk> = corpus.all_chunks().cloned().collect();
    let mut out = RaftBuild::default();
    let limit = cfg.max_records.unwrap_or(usize::MAX);

    // Ask for questions only for as many chunks as the record limit can use.
    let needed_chunks = limit.div_ceil(cfg.questions_per_chunk).min(pool.len());
    let question_sets = parallel::bounded_map(&pool[..needed_chunks], cfg.concurrency, |c| {
        generate_questions(c, cfg.questions_per_chunk, llm)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pending = Vec::new();
    'chunks: for (oracle, qs) in pool.iter().zip(question_sets) {
        let qs = match qs {
            Ok(qs) => qs,
            Err(e) => {
                out.warnings.push(format!("chunk {} skipped: {e}", oracle.id));
                continue;
            }
        };
        for question in qs {
            if pending.len() >= limit {
                break 'chunks;
            }
            let draw = RecordDraw::next(&mut rng);
            let include_oracle = draw.bernoulli < cfg.oracle_fraction;
            let distractors = match sample_distractors(oracle, &pool, cfg.num_distractors, draw.distractor_seed) {
                Ok(d) => d,
                Err(e) => {
                    out.warnings.push(format!("record for chunk {} skipped: {e}", oracle.id));
                    continue;
                }
            };
            let mut listed: Vec<&Chunk> = Vec::with_capacity(distractors.len() + 1);
            if include_oracle {
                listed.push(oracle);
            }
            listed.extend(distractors.iter().copied());
            listed.shuffle(&mut ChaCha8Rng::seed_from_u64(draw.shuffle_seed));
            pending.push(Pending {
                oracle,
                question: question.clone(),
                record: RaftRecord {
                    question,
                    oracle_chunk_ids: if include_oracle { vec![oracle.id.clone()] } else { Vec::new() },
                    distractor_chunk_ids: distractors.iter().map(|c| c.id.clone()).collect(),
                    context_block: context_block(&listed),
                    cot_answer: String::new(),
                },
            });
        }
    }

    let answers = parallel::bounded_map(&pending, cfg.concurrency, |p| {
        llm.run(
            PromptTask::RaftAnswer,
            &[("question", &p.question), ("passage", &p.oracle.text)],
            512,
        )
        .map_err(|e| e.to_string())
        .and_then(|a| {
            if a.contains(ANSWER_MARKER) {
                Ok(a.trim().to_string())
            } else {
                Err(format!("answer lacks the {ANSWER_MARKER} marker"))
            }
        })
    });
    for (p, answer) in pending.into_iter().zip(answers) {
        match answer {
            Ok(a) => {
                let mut r = p.record;
                r.cot_answer = a;
                out.records.push(r);
            }
            Err(e) => out.warnings.push(format!("record for chunk {} skipped: {e}", p.oracle.id)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportMetadata {
    pub question: String,
    pub oracle_chunk_ids: Vec<String>,
    pub distractor_chunk_ids: Vec<String>,
}

/// One line of the export file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportLine {
    pub messages: Vec<ChatMessage>,
    pub metadata: ExportMetadata,
}

impl From<&RaftRecord> for ExportLine {
    fn from(r: &RaftRecord) -> Self {
        Self {
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: RAFT_SYSTEM_PROMPT.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: format!("{}{QUESTION_PREFIX}{}", r.context_block, r.question),
                },
                ChatMessage {
                    role: "assistant".into(),
                    content: r.cot_answer.clone(),
                },
            ],
            metadata: ExportMetadata {
                question: r.question.clone(),
                oracle_chunk_ids: r.oracle_chunk_ids.clone(),
                distractor_chunk_ids: r.distractor_chunk_ids.clone(),
            },
        }
    }
}

impl ExportLine {
    /// Checks the line against the export schema.
    pub fn validate(&self) -> Result<(), String> {
        let roles: Vec<&str> = self.messages.iter().map(|m| m.role.as_str()).collect();
        if roles != ["system", "user", "assistant"] {
            return Err(format!("messages must be system, user, assistant; got {roles:?}"));
        }
        if let Some(m) = self.messages.iter().find(|m| m.content.trim().is_empty()) {
            return Err(format!("{} message is empty", m.role));
        }
        let md = &self.metadata;
        if md.question.trim().is_empty() {
            return Err("metadata.question is empty".into());
        }
        let user = &self.messages[1].content;
        let context = user
            .strip_suffix(md.question.as_str())
            .and_then(|u| u.strip_suffix(QUESTION_PREFIX))
            .ok_or("user message must end with the question")?;
        if !self.messages[2].content.contains(ANSWER_MARKER) {
            return Err(format!("assistant message lacks {ANSWER_MARKER}"));
        }
        if md.oracle_chunk_ids.len() > 1 {
            return Err("at most one oracle chunk per record".into());
        }
        let listed: Vec<&String> = md.oracle_chunk_ids.iter().chain(&md.distractor_chunk_ids).collect();
        if listed.is_empty() {
            return Err("record lists no chunks".into());
        }
        let unique: HashSet<&String> = listed.iter().copied().collect();
        if unique.len() != listed.len() {
            return Err("chunk ids repeat".into());
        }
        for id in &listed {
            let n = context.matches(&document_tag(id)).count();
            if n != 1 {
                return Err(format!("chunk {id} appears {n} times in context"));
            }
        }
        if context.matches("<DOCUMENT id=").count() != listed.len() {
            return Err("context holds unlisted documents".into());
        }
        if let Some(oracle) = md.oracle_chunk_ids.first() {
            let doc = doc_of_chunk_id(oracle);
            if let Some(d) = md.distractor_chunk_ids.iter().find(|d| doc_of_chunk_id(d) == doc) {
                return Err(format!("distractor {d} shares a document with oracle {oracle}"));
            }
        }
        Ok(())
    }

    pub fn into_record(self) -> Result<RaftRecord, String> {
        self.validate()?;
        let mut messages = self.messages.into_iter();
        let _system = messages.next();
        let user = messages.next().expect("validated").content;
        let cot_answer = messages.next().expect("validated").content;
        let cut = user.len() - self.metadata.question.len() - QUESTION_PREFIX.len();
        Ok(RaftRecord {
            context_block: user[..cut].to_string(),
            question: self.metadata.question,
            oracle_chunk_ids: self.metadata.oracle_chunk_ids,
            distractor_chunk_ids: self.metadata.distractor_chunk_ids,
            cot_answer,
        })
    }
}

pub fn export_line(record: &RaftRecord) -> String {
    serde_json::to_string(&ExportLine::from(record)).expect("export line serializes")
}

/// Writes one JSON line per record and returns the line count.
pub fn export_records(records: &[RaftRecord], path: &Path) -> Result<usize, RaftError> {
    if records.is_empty() {
        return Err(RaftError::NothingToExport);
    }
    let mut buf = Vec::new();
    for r in records {
        buf.extend_from_slice(export_line(r).as_bytes());
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    Ok(records.len())
}

/// Parses and validates an export file; returns its records.
pub fn read_export(path: &Path) -> Result<Vec<RaftRecord>, RaftError> {
    let text = std::fs::read_to_string(path)?;
    parse_export(&text)
}

pub fn parse_export(text: &str) -> Result<Vec<RaftRecord>, RaftError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let schema = |message: String| RaftError::Schema { line: i + 1, message };
        if line.trim().is_empty() {
            return Err(schema("blank line".into()));
        }
        let parsed: ExportLine = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        out.push(parsed.into_record().map_err(schema)?);
    }
    if out.is_empty() {
        return Err(RaftError::NothingToExport);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChunkingConfig;
    use crate::generator::{Prompts, ScriptedGenerator};
    use std::sync::Arc;

    fn corpus(docs: usize, pages: usize) -> Corpus {
        let mut c = Corpus::new(ChunkingConfig::new(13, 0).unwrap()).unwrap();
        for d in 0..docs {
            let pages = (0..pages)
                .map(|p| format!("doc{d} page{p} words a b c d e f g h i j"))
                .collect();
            c.ingest_text(&format!("doc{d}"), pages).unwrap();
        }
        c
    }

    fn llm() -> GenerationHandle {
        GenerationHandle::new(
            Arc::new(ScriptedGenerator::from_rules(&[
                ("task:raft_question", &["What is described?\nWhat is described?\nWhich page?"]),
                ("task:raft_answer", &["The passage says so.\n#### it"]),
            ])),
            Arc::new(Prompts::default()),
            "base",
        )
    }

    fn chunk(id: &str, doc: &str) -> Chunk {
        Chunk {
            id: id.into(),
            doc_id: doc.into(),
            page: 1,
            char_span: (0, 1),
            text: format!("text of {id}"),
            approx_tokens: 1,
        }
    }

    #[test]
    fn question_generation() {
        let c = chunk("da-00000", "da");
        let one = GenerationHandle::new(
            Arc::new(ScriptedGenerator::from_rules(&[("task:raft_question", &["Q1"])])),
            Arc::new(Prompts::default()),
            "m",
        );
        assert_eq!(generate_questions(&c, 1, &one).unwrap(), vec!["Q1"]);
        let dup = GenerationHandle::new(
            Arc::new(ScriptedGenerator::from_rules(&[("task:raft_question", &["Q\nQ"])])),
            Arc::new(Prompts::default()),
            "m",
        );
        assert_eq!(generate_questions(&c, 2, &dup).unwrap(), vec!["Q"]);
        let three = GenerationHandle::new(
            Arc::new(ScriptedGenerator::from_rules(&[("task:raft_question", &["1. A?\n2. B?\n3. C?"])])),
            Arc::new(Prompts::default()),
            "m",
        );
        assert_eq!(generate_questions(&c, 3, &three).unwrap(), vec!["A?", "B?", "C?"]);
    }

    #[test]
    fn distractor_sampling() {
        let oracle = chunk("da-00000", "da");
        let pool: Vec<Chunk> = (0..100)
            .map(|i| chunk(&format!("d{}-{i:05}", i % 5), &format!("d{}", i % 5)))
            .collect();
        assert!(sample_distractors(&oracle, &pool, 0, 1).unwrap().is_empty());
        let a = sample_distractors(&oracle, &pool, 4, 7).unwrap();
        let b = sample_distractors(&oracle, &pool, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a.iter().map(|c| &c.id).collect::<HashSet<_>>().len(), 4);

        let same: Vec<Chunk> = (0..10).map(|i| chunk(&format!("da-{i:05}"), "da")).collect();
        let err = sample_distractors(&oracle, &same, 1, 1).unwrap_err();
        assert_eq!(err.to_string(), "insufficient distractor pool: required 1, available 0");
    }

    #[test]
    fn oracle_fraction_boundaries() {
        let c = corpus(3, 4);
        for (fraction, expect_oracle) in [(1.0, true), (0.0, false)] {
            let cfg = RaftConfig {
                oracle_fraction: fraction,
                num_distractors: 2,
                ..RaftConfig::default()
            };
            let build = build_records(&c, &cfg, &llm()).unwrap();
            assert_eq!(build.records.len(), c.chunk_count());
            assert!(build.records.iter().all(|r| r.oracle_chunk_ids.is_empty() != expect_oracle));
        }
    }

    #[test]
    fn oracle_share_replays_seeded_draws() {
        let c = corpus(5, 40);
        let cfg = RaftConfig {
            max_records: Some(200),
            ..RaftConfig::default()
        };
        let build = build_records(&c, &cfg, &llm()).unwrap();
        assert_eq!(build.records.len(), 200);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let expected: Vec<bool> = (0..200).map(|_| RecordDraw::next(&mut rng).bernoulli < 0.8).collect();
        let observed: Vec<bool> = build.records.iter().map(|r| !r.oracle_chunk_ids.is_empty()).collect();
        assert_eq!(observed, expected);
    }

    #[test]
    fn records_hold_invariants() {
        let c = corpus(4, 6);
        let build = build_records(&c, &RaftConfig::default(), &llm()).unwrap();
        for r in &build.records {
            for id in r.oracle_chunk_ids.iter().chain(&r.distractor_chunk_ids) {
                assert_eq!(r.context_block.matches(&document_tag(id)).count(), 1);
                let text = &c.chunk(id).unwrap().text;
                assert!(r.context_block.contains(text.as_str()));
            }
            if let Some(o) = r.oracle_chunk_ids.first() {
                let od = &c.chunk(o).unwrap().doc_id;
                assert!(r.distractor_chunk_ids.iter().all(|d| &c.chunk(d).unwrap().doc_id != od));
            }
            assert!(r.cot_answer.contains(ANSWER_MARKER));
            assert!(ExportLine::from(r).validate().is_ok());
        }
    }

    #[test]
    fn single_document_rejected() {
        let c = corpus(1, 3);
        assert!(matches!(
            build_records(&c, &RaftConfig::default(), &llm()),
            Err(RaftError::TooFewDocuments(1))
        ));
    }

    #[test]
    fn answers_without_marker_are_skipped() {
        let c = corpus(2, 5);
        let g = GenerationHandle::new(
            Arc::new(ScriptedGenerator::from_rules(&[
                ("task:raft_question", &["Q?"]),
                ("task:raft_answer", &["no marker here"]),
            ])),
            Arc::new(Prompts::default()),
            "m",
        );
        let cfg = RaftConfig {
            num_distractors: 1,
            ..RaftConfig::default()
        };
        let build = build_records(&c, &cfg, &g).unwrap();
        assert!(build.records.is_empty());
        assert_eq!(build.warnings.len(), c.chunk_count());
    }

    #[test]
    fn export_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        assert!(matches!(export_records(&[], &path), Err(RaftError::NothingToExport)));

        let c = corpus(3, 20);
        let cfg = RaftConfig {
            max_records: Some(50),
            num_distractors: 3,
            ..RaftConfig::default()
        };
        let build = build_records(&c, &cfg, &llm()).unwrap();
        assert_eq!(export_records(&build.records[..1], &path).unwrap(), 1);
        assert_eq!(read_export(&path).unwrap(), build.records[..1].to_vec());

        assert_eq!(export_records(&build.records, &path).unwrap(), 50);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 50);
        assert_eq!(parse_export(&text).unwrap(), build.records);

        let bad = dir.path().join("missing/dir/out.jsonl");
        assert!(matches!(export_records(&build.records, &bad), Err(RaftError::Io(_))));
    }

    #[test]
    fn validator_catches_violations() {
        let r = RaftRecord {
            question: "Q?".into(),
            oracle_chunk_ids: vec!["da-00000".into()],
            distractor_chunk_ids: vec!["db-00001".into()],
            context_block: context_block(&[&chunk("db-00001", "db"), &chunk("da-00000", "da")]),
            cot_answer: "because\n#### x".into(),
        };
        assert!(ExportLine::from(&r).validate().is_ok());

        let mut same_doc = r.clone();
        same_doc.distractor_chunk_ids = vec!["da-00001".into()];
        same_doc.context_block = context_block(&[&chunk("da-00001", "da"), &chunk("da-00000", "da")]);
        assert!(ExportLine::from(&same_doc).validate().unwrap_err().contains("shares a document"));

        let mut no_marker = r.clone();
        no_marker.cot_answer = "x".into();
        assert!(ExportLine::from(&no_marker).validate().is_err());

        let mut missing = r.clone();
        missing.context_block = context_block(&[&chunk("da-00000", "da")]);
        assert!(ExportLine::from(&missing).validate().is_err());

        let err = parse_export("{\"messages\": []}\n").unwrap_err();
        assert!(matches!(err, RaftError::Schema { line: 1, .. }));
    }
}
