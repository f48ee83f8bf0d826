use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::error::{CliError, CliResult};
use crate::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Digest of one input file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    /// hex SHA-256 of the file contents
    pub sha256: String,
}

/// Everything needed to reproduce one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// the parsed command line
    pub invocation: Command,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// module parameters in effect, as text
    pub overrides: BTreeMap<String, String>,
    pub output_dir: PathBuf,
    pub inputs: Vec<InputDigest>,
    /// SHA-256 over the sorted `path\0digest\n` lines of `inputs`
    pub input_hash: String,
}

impl RunManifest {
    pub fn new(invocation: Command, output_dir: &Path) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            config_paths: Vec::new(),
            seed: None,
            overrides: BTreeMap::new(),
            output_dir: output_dir.to_path_buf(),
            inputs: Vec::new(),
            input_hash: String::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.overrides.insert(key.to_string(), value.to_string());
    }

    /// Hashes a file, or every file below a directory.
    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        for entry in WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let bytes =
                fs::read(entry.path()).map_err(|e| CliError::Data(format!("{}: {e}", entry.path().display())))?;
            self.inputs.push(InputDigest {
                path: entry.path().to_path_buf(),
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        self.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.inputs.dedup();
        let mut h = Sha256::new();
        for d in &self.inputs {
            h.update(d.path.to_string_lossy().as_bytes());
            h.update(b"\0");
            h.update(d.sha256.as_bytes());
            h.update(b"\n");
        }
        self.input_hash = hex(&h.finalize());
        Ok(())
    }

    pub fn add_config(&mut self, path: &Path) -> CliResult<()> {
        self.config_paths.push(path.to_path_buf());
        self.add_input(path)
    }

    pub fn write(&self) -> CliResult<()> {
        let path = self.output_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
