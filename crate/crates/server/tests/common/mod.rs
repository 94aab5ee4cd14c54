#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn paper(name: &str) -> String {
    fixtures().join("papers").join(name).display().to_string()
}

/// Runs the binary against the fixture config with `data` as the corpus dir.
pub fn docent(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docent"))
        .arg("--config")
        .arg(fixtures().join("config.toml"))
        .arg("--corpus")
        .arg(data)
        .args(args)
        .env_remove("PROVIDER_API_KEY")
        .env_remove("PROVIDER_BASE_URL")
        .output()
        .expect("binary runs")
}

pub fn stdout_ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

/// A data dir holding the three fixture papers.
pub fn ingested() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let files = [paper("rag.txt"), paper("fusion.md"), paper("graphs.txt")];
    let mut args = vec!["ingest"];
    args.extend(files.iter().map(String::as_str));
    stdout_ok(docent(dir.path(), &args));
    dir
}

/// The fixture config with its data dir pointed at `data`. Environment
/// overrides are not applied.
pub fn config(data: &Path) -> docent_server::config::ServiceConfig {
    let src = std::fs::read_to_string(fixtures().join("config.toml")).unwrap();
    let mut cfg = docent_server::config::ServiceConfig::parse(&src).unwrap();
    cfg.resolve_paths(&fixtures());
    cfg.data_dir = data.to_path_buf();
    cfg
}

pub fn service(data: &Path) -> docent_server::ops::Service {
    docent_server::ops::Service::from_config(&config(data)).unwrap()
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("papers").join(name)).unwrap()
}
