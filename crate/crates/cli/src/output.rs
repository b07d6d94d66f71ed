use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use repinf_core::experiments::{streams, RunConfig};

use crate::Failure;

/// Collects the files a command writes, for the manifest.
pub struct OutDir {
    pub root: PathBuf,
    pub files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    /// Writes a CSV with `header` and pre-formatted rows.
    pub fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), Failure> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| Failure::Usage(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let path = self.path(name);
        repinf_core::experiments::write_json(&path, value).map_err(Failure::from)
    }
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `prefix0, prefix1, ...`
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn f(v: f64) -> String {
    format!("{v}")
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Seeds {
    master: u64,
    train: u64,
    trials: u64,
    stages: u64,
    eval: u64,
    discriminator: u64,
}

#[derive(Serialize)]
struct Manifest<'a, E: Serialize> {
    command: &'a str,
    argv: Vec<String>,
    config: &'a RunConfig,
    config_hash: String,
    seeds: Seeds,
    outputs: &'a [String],
    extra: E,
}

/// Writes `manifest.json`: the resolved config, its hash, derived seeds and
/// the files produced, which is enough to rerun the command.
pub fn write_manifest(out: &mut OutDir, command: &str, config: &RunConfig, extra: impl Serialize) -> Result<(), Failure> {
    let mut outputs = out.files.clone();
    outputs.push("config.json".into());
    out.json("config.json", config)?;
    let manifest = Manifest {
        command,
        argv: std::env::args().collect(),
        config,
        config_hash: config_hash(config),
        seeds: Seeds {
            master: config.seed,
            train: config.stream(streams::TRAIN),
            trials: config.stream(streams::TRIALS),
            stages: config.stream(streams::STAGES),
            eval: config.stream(streams::EVAL),
            discriminator: config.stream(streams::DISCRIMINATOR),
        },
        outputs: &outputs,
        extra,
    };
    out.json("manifest.json", &manifest)
}
