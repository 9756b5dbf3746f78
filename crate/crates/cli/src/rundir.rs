//! Output directories and their reproducibility manifest.

use std::fs;
use std::path::{Path, PathBuf};

use cpc_core::harness::{config_hash, hex_digest};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "run.json";

/// SHA-256 over `blob <len>\0<content>`, the way git names blobs (with
/// SHA-256 in place of SHA-1).
pub fn blob_hash(content: &[u8]) -> String {
    let mut bytes = format!("blob {}\0", content.len()).into_bytes();
    bytes.extend_from_slice(content);
    hex_digest(&bytes)
}

#[derive(Serialize)]
struct Input {
    path: String,
    blob_sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    config_file: &'a str,
    inputs: Vec<Input>,
    outputs: Vec<String>,
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `path` if needed. A directory that already holds files is only
    /// reused with `force`.
    pub fn create(path: &Path, force: bool) -> Result<Self, CliError> {
        if path.exists() {
            let occupied = fs::read_dir(path).map_err(runtime)?.next().is_some();
            if occupied && !force {
                return Err(CliError::Invalid(cpc_core::Error::Config(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    path.display()
                ))));
            }
        }
        fs::create_dir_all(path).map_err(runtime)?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes the resolved config and `run.json` listing the inputs with
    /// their content hashes and the artifacts produced.
    pub fn finish(&self, command: &str, config: &RunConfig, inputs: &[PathBuf], outputs: &[&str]) -> Result<(), CliError> {
        fs::write(self.file(CONFIG_FILE), config.to_toml()).map_err(runtime)?;
        let inputs = inputs
            .iter()
            .map(|p| {
                let content = fs::read(p).map_err(runtime)?;
                Ok(Input {
                    path: p.display().to_string(),
                    blob_sha256: blob_hash(&content),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = Manifest {
            command,
            seed: config.seed,
            config_hash: config_hash(config).map_err(CliError::Runtime)?,
            config_file: CONFIG_FILE,
            inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(self.file(MANIFEST_FILE), json + "\n").map_err(runtime)
    }
}

fn runtime(e: std::io::Error) -> CliError {
    CliError::Runtime(e.into())
}
