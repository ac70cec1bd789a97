//! Output directory with a manifest of everything written to it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::scenario::Scenario;

pub const MANIFEST: &str = "manifest.json";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    method: &'a str,
    scenario_sha256: &'a str,
    tool_version: &'a str,
    created: String,
    files: Vec<FileEntry>,
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    /// Creates the directory and clears a marker left by an earlier failure.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        let marker = root.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Renders a file in memory, writes it and records its hash.
    pub fn write<F, E>(&mut self, name: &str, render: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
        CliError: From<E>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.root.join(name);
        fs::write(&path, &buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        log::debug!("wrote {}", path.display());
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: buf.len(),
            sha256: hex::encode(Sha256::digest(&buf)),
        });
        Ok(())
    }

    pub fn finish(mut self, scenario: &Scenario) -> Result<PathBuf, CliError> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            scenario: &scenario.raw.name,
            method: scenario.raw.method.label(),
            scenario_sha256: &scenario.hash,
            tool_version: env!("CARGO_PKG_VERSION"),
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            files: self.files,
        };
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Best effort: the original error matters more than a failure to mark it.
pub fn mark_failed(root: &Path, err: &CliError) {
    if fs::create_dir_all(root).is_ok() {
        let _ = fs::write(root.join(FAILED_MARKER), format!("{err}\n"));
    }
}
