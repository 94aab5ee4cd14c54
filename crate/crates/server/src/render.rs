//! Plain-text renderings of API responses for the CLI.

use std::fmt::Write;

use docent_core::corpus::ImportManifest;

use crate::ops::{AskResponse, PapersResponse};

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Answer, citations and evidence. Latency is left out so the output is
/// reproducible.
pub fn ask_text(r: &AskResponse) -> String {
    let mut out = String::new();
    writeln!(out, "{}", r.answer.trim_end()).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "Citations:").unwrap();
    if r.citations.is_empty() {
        writeln!(out, "  (none)").unwrap();
    }
    for c in &r.citations {
        writeln!(out, "  - {}", c.render()).unwrap();
    }
    writeln!(out, "Evidence:").unwrap();
    if r.evidence.is_empty() {
        writeln!(out, "  (none)").unwrap();
    }
    for e in &r.evidence {
        writeln!(
            out,
            "  - [{:.2}] {} {}: {}",
            e.score,
            e.citation.render(),
            e.chunk_id,
            one_line(&e.summary)
        )
        .unwrap();
    }
    writeln!(
        out,
        "Iterations: {}, complete: {}, grounded: {}",
        r.iterations,
        yes_no(r.complete),
        yes_no(r.grounded)
    )
    .unwrap();
    if !r.warnings.is_empty() {
        writeln!(out, "Warnings:").unwrap();
        for w in &r.warnings {
            writeln!(out, "  - {}", one_line(w)).unwrap();
        }
    }
    out
}

pub fn papers_text(r: &PapersResponse) -> String {
    let mut out = String::from("id\tlabel\tpages\tchunks\n");
    for p in &r.papers {
        writeln!(out, "{}\t{}\t{}\t{}", p.id, p.label, p.pages, p.chunks).unwrap();
    }
    out
}

pub fn manifest_text(m: &ImportManifest) -> String {
    let mut out = String::new();
    for e in &m.entries {
        let status = serde_json::to_value(e.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        write!(out, "{status}\t{}", e.url).unwrap();
        if let Some(id) = &e.doc_id {
            write!(out, "\t{id}").unwrap();
        }
        if let Some(err) = &e.error {
            write!(out, "\t{}", one_line(err)).unwrap();
        }
        out.push('\n');
    }
    out
}
