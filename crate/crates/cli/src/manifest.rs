//! Run manifests: the resolved configuration plus provenance.
//!
//! A manifest is itself a valid configuration document. Provenance lives in
//! `#` header lines, which the config parser skips, so a manifest can be
//! passed back to any subcommand verbatim.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ExperimentConfig};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    /// Path relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    /// Hash over the resolved config and every input file.
    pub input_hash: String,
    pub artifacts: Vec<Artifact>,
    pub config: ExperimentConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Git-style hash of named inputs: each input is hashed as a blob
/// (`blob <len>\0<bytes>`), then the sorted `name hash` lines are hashed
/// as a tree.
pub fn content_hash(inputs: &[(String, Vec<u8>)]) -> String {
    let mut lines: Vec<String> = inputs
        .iter()
        .map(|(name, bytes)| {
            let mut blob = format!("blob {}\0", bytes.len()).into_bytes();
            blob.extend_from_slice(bytes);
            format!("{name} {}\n", sha256_hex(&blob))
        })
        .collect();
    lines.sort();
    sha256_hex(lines.concat().as_bytes())
}

/// Hash each file in `dir` named by `paths`.
pub fn hash_artifacts(dir: &Path, paths: &[PathBuf]) -> std::io::Result<Vec<Artifact>> {
    paths
        .iter()
        .map(|p| {
            Ok(Artifact {
                path: p.clone(),
                sha256: sha256_hex(&fs::read(dir.join(p))?),
            })
        })
        .collect()
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# silab run manifest\n");
        let _ = writeln!(out, "# command: {}", self.command);
        let _ = writeln!(out, "# tool_version: {}", self.tool_version);
        let _ = writeln!(out, "# seed: {}", self.seed);
        let _ = writeln!(out, "# started: {}", self.started);
        let _ = writeln!(out, "# finished: {}", self.finished);
        let _ = writeln!(out, "# input_hash: {}", self.input_hash);
        for a in &self.artifacts {
            let _ = writeln!(out, "# artifact: {} {}", a.sha256, a.path.display());
        }
        out.push_str(&self.config.to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let header = |name: &str| {
            let prefix = format!("# {name}: ");
            text.lines()
                .find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
                .ok_or_else(|| ConfigError {
                    line: None,
                    message: format!("manifest header `{name}` missing"),
                })
        };
        let command = header("command")?;
        let tool_version = header("tool_version")?;
        let seed = header("seed")?.parse().map_err(|_| ConfigError {
            line: None,
            message: "manifest seed is not an integer".into(),
        })?;
        let started = header("started")?;
        let finished = header("finished")?;
        let input_hash = header("input_hash")?;
        let artifacts = text
            .lines()
            .filter_map(|l| l.strip_prefix("# artifact: "))
            .map(|rest| {
                let (hash, path) = rest.split_once(' ').unwrap_or((rest, ""));
                Artifact {
                    path: PathBuf::from(path),
                    sha256: hash.to_string(),
                }
            })
            .collect();
        Ok(Self {
            command,
            tool_version,
            seed,
            started,
            finished,
            input_hash,
            artifacts,
            config: ExperimentConfig::parse(text)?,
        })
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_text())?;
        Ok(path)
    }
}
