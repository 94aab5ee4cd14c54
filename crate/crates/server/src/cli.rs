//! Command-line interface. Every subcommand goes through the same
//! [`Service`] calls as the HTTP API and prints a rendering of the result.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use docent_core::corpus::ImportManifest;
use docent_core::eval::{compare_backends, load_gold, EvalConfig, EvalContext};
use docent_core::raft::{export_records, read_export, RaftConfig};
use docent_core::Engine;

use crate::api::{self, AppState};
use crate::config::ServiceConfig;
use crate::ops::{AskRequest, Service, UploadRequest};
use crate::render;

#[derive(Debug, Parser)]
#[command(name = "docent", version, about = "Question answering over scientific papers")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Data directory holding the corpus and index (overrides data_dir).
    #[arg(long, global = true, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest local text files and/or papers fetched by URL.
    Ingest(IngestArgs),
    /// List ingested papers.
    Papers {
        #[arg(long)]
        json: bool,
    },
    /// Answer a question with citations.
    Ask(AskArgs),
    /// Build the reference graph of one paper as Mermaid source.
    Refgraph(RefgraphArgs),
    /// Evaluate retrieval methods against a gold file.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write fine-tuning records with oracle and distractor chunks.
    RaftExport(RaftArgs),
    /// Check a fine-tuning export file against the schema.
    RaftValidate { file: PathBuf },
    /// Run the HTTP service.
    Serve {
        /// Overrides listen_address.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Text or markdown files; form feeds separate pages.
    pub files: Vec<PathBuf>,
    /// Paper URL to fetch (repeatable).
    #[arg(long = "url", value_name = "URL")]
    pub urls: Vec<String>,
    /// Label for a single file (defaults to the file stem).
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    pub question: String,
    /// basic or fusion.
    #[arg(long)]
    pub mode: Option<String>,
    /// base or finetuned.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of fusion query variants.
    #[arg(long)]
    pub variants: Option<usize>,
    /// Print the full response as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RefgraphArgs {
    /// Document id or label.
    pub doc: String,
    #[arg(long)]
    pub k: Option<usize>,
    /// Write the Mermaid source here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the full response as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Run the method comparison and print the table.
    Run(EvalRunArgs),
    /// Check a gold file against the corpus.
    Validate { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    /// Gold file: one {"question", "gold_chunk_ids"} object per line.
    #[arg(long, value_name = "FILE")]
    pub items: PathBuf,
    /// Comma-separated methods: rag, fusion, fusion+ft.
    #[arg(long, default_value = "rag,fusion", value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated index backends to compare (at least two).
    #[arg(long, value_delimiter = ',')]
    pub backends: Vec<String>,
    /// Evaluate items concurrently; latency is not reported.
    #[arg(long)]
    pub parallel: bool,
    /// Score retrieval only, without drafting answers.
    #[arg(long)]
    pub retrieval_only: bool,
    /// Write the machine-readable report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RaftArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub distractors: usize,
    #[arg(long, default_value_t = 0.8)]
    pub oracle_fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub questions_per_chunk: usize,
    #[arg(long)]
    pub max_records: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(|e| e.to_string())?,
        None => ServiceConfig::from_env(),
    };
    if let Some(dir) = &cli.corpus {
        cfg.data_dir = dir.clone();
    }
    Ok(cfg)
}

fn service(cfg: &ServiceConfig) -> Result<Service, String> {
    Service::from_config(cfg).map_err(|e| e.to_string())
}

fn json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn file_label(path: &Path) -> Result<String, String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| format!("cannot derive a label from {}", path.display()))
}

/// Runs one command, writing its output to `out`. Errors are one line.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), String> {
    let cfg = load_config(&cli)?;
    let write = |out: &mut dyn Write, s: &str| out.write_all(s.as_bytes()).map_err(|e| e.to_string());
    match cli.command {
        Command::Ingest(args) => {
            if args.files.is_empty() && args.urls.is_empty() {
                return Err("nothing to ingest: give files or --url".into());
            }
            if args.label.is_some() && args.files.len() != 1 {
                return Err("--label needs exactly one file".into());
            }
            let svc = service(&cfg)?;
            let mut manifest = ImportManifest::default();
            for path in &args.files {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let label = match &args.label {
                    Some(l) => l.clone(),
                    None => file_label(path)?,
                };
                let r = svc
                    .ingest(UploadRequest {
                        label,
                        text: Some(text),
                        pages: None,
                        source_uri: Some(path.display().to_string()),
                    })
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                manifest.entries.extend(r.manifest.entries);
            }
            if !args.urls.is_empty() {
                let m = svc.import(&args.urls, |_| {}).map_err(|e| e.to_string())?;
                manifest.entries.extend(m.entries);
            }
            write(out, &render::manifest_text(&manifest))
        }
        Command::Papers { json: as_json } => {
            let r = service(&cfg)?.papers();
            write(out, &if as_json { json(&r) } else { render::papers_text(&r) })
        }
        Command::Ask(args) => {
            let req = AskRequest {
                question: args.question,
                mode: args.mode,
                model: args.model,
                k: args.k,
                variants: args.variants,
            };
            let r = service(&cfg)?.ask(&req).map_err(|e| e.to_string())?;
            write(out, &if args.json { json(&r) } else { render::ask_text(&r) })
        }
        Command::Refgraph(args) => {
            if args.k == Some(0) {
                return Err("k must be positive".into());
            }
            let r = service(&cfg)?
                .refgraph(&args.doc, args.k)
                .map_err(|e| e.to_string())?;
            for w in &r.warnings {
                tracing::warn!("{w}");
            }
            if args.json {
                return write(out, &json(&r));
            }
            match &args.out {
                Some(path) => {
                    std::fs::write(path, &r.mermaid).map_err(|e| format!("{}: {e}", path.display()))?;
                    write(out, &format!("wrote {}\n", path.display()))
                }
                None => write(out, &r.mermaid),
            }
        }
        Command::Eval(EvalCommand::Validate { file }) => {
            let engine = cfg.open_engine().map_err(|e| e.to_string())?;
            let items = load_gold(&file, Some(&engine.corpus())).map_err(|e| format!("{}: {e}", file.display()))?;
            write(out, &format!("{} items valid\n", items.len()))
        }
        Command::Eval(EvalCommand::Run(args)) => {
            let engine = cfg.open_engine().map_err(|e| e.to_string())?;
            eval_run(&engine, &cfg, args, out)
        }
        Command::RaftExport(args) => {
            let engine = cfg.open_engine().map_err(|e| e.to_string())?;
            let rc = RaftConfig {
                num_distractors: args.distractors,
                oracle_fraction: args.oracle_fraction,
                questions_per_chunk: args.questions_per_chunk,
                seed: args.seed,
                max_records: args.max_records,
                concurrency: cfg.concurrency,
            };
            let build = engine.raft(&rc).map_err(|e| e.to_string())?;
            for w in &build.warnings {
                tracing::warn!("{w}");
            }
            let n = export_records(&build.records, &args.out).map_err(|e| e.to_string())?;
            write(out, &format!("wrote {n} records to {}\n", args.out.display()))
        }
        Command::RaftValidate { file } => {
            let records = read_export(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            write(out, &format!("{} records valid\n", records.len()))
        }
        Command::Serve { listen } => {
            let mut cfg = cfg;
            if let Some(addr) = listen {
                cfg.listen_address = addr;
            }
            serve(&cfg)
        }
    }
}

fn eval_run(engine: &Engine, cfg: &ServiceConfig, args: EvalRunArgs, out: &mut dyn Write) -> Result<(), String> {
    let corpus = engine.corpus();
    let items = load_gold(&args.items, Some(&corpus)).map_err(|e| format!("{}: {e}", args.items.display()))?;
    let mut retrieval = cfg.retrieval;
    retrieval.concurrency = cfg.concurrency;
    if let Some(k) = args.k {
        if k == 0 {
            return Err("k must be at least 1".into());
        }
        retrieval.k = k;
        retrieval.per_list_depth = retrieval.per_list_depth.max(k);
    }
    let ecfg = EvalConfig {
        retrieval,
        generate_answers: !args.retrieval_only,
        finetuned_model: cfg.generator.finetuned_model.clone(),
        parallel: args.parallel,
        concurrency: cfg.concurrency,
        ..EvalConfig::default()
    };
    let index = engine.index();
    let ctx = EvalContext {
        corpus: &corpus,
        store: index.as_ref(),
        embedder: engine.embedder(),
        llm: engine.generator(),
    };
    let (text, report_json) = if args.backends.is_empty() {
        let report = docent_core::eval::run_comparison(&items, &args.methods, &ctx, &ecfg).map_err(|e| e.to_string())?;
        (report.table(), report.to_json())
    } else {
        let names: Vec<&str> = args.backends.iter().map(String::as_str).collect();
        let workdir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = compare_backends(&items, &args.methods, &names, index.as_ref(), &ctx, &ecfg, workdir.path())
            .map_err(|e| e.to_string())?;
        let verdict = if report.f1_invariant() { "yes" } else { "no" };
        (
            format!("{}\nF1 identical across backends: {verdict}\n", report.table()),
            serde_json::to_string_pretty(&report).expect("serializable"),
        )
    };
    if let Some(path) = &args.out {
        std::fs::write(path, report_json + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    }
    out.write_all(text.as_bytes()).map_err(|e| e.to_string())
}

fn serve(cfg: &ServiceConfig) -> Result<(), String> {
    let addr = cfg.listen_addr().map_err(|e| e.to_string())?;
    let svc = service(cfg)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(api::serve(
        AppState::new(svc),
        addr,
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
        |bound| tracing::info!(%bound, "listening"),
    ))
    .map_err(|e| format!("cannot serve on {addr}: {e}"))
}
