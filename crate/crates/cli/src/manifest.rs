use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub sha256: String,
    pub command: String,
    pub config_hash: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::output(path, e))
}

/// Appends one entry per artifact to `out/manifest.jsonl`.
pub fn record(out: &Path, artifacts: &[PathBuf], command: &str, config_hash: &str) -> Result<(), CliError> {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut lines = String::new();
    for path in artifacts {
        let entry = ManifestEntry {
            path: path.clone(),
            sha256: sha256_file(path)?,
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            timestamp,
        };
        lines.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        lines.push('\n');
    }
    fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
    let path = out.join(MANIFEST_FILE);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::output(&path, e))?;
    f.write_all(lines.as_bytes()).map_err(|e| CliError::output(&path, e))
}

pub fn read(out: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let path = out.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Input(format!("{}: {e}", path.display()))))
        .collect()
}
