//! Output directory handling and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders CSV into memory with `fill`, then writes it in one go.
pub fn write_csv_with<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_bytes(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// What a command produced, stored next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_version: u32,
    pub seeds: Vec<u64>,
    pub dataset_seed: u64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_version: u32, seeds: Vec<u64>, dataset_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_version,
            seeds,
            dataset_seed,
            files: Vec::new(),
        }
    }

    /// Records `path` relative to `root`.
    pub fn record(&mut self, root: &Path, path: &Path) {
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.files.push(rel.display().to_string());
    }

    pub fn write(&mut self, root: &Path) -> Result<PathBuf> {
        self.files.sort();
        let path = root.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_write_creates_parents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_bytes(&p, b"hi").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hi");
    }

    #[test]
    fn unwritable_target_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, b"x").unwrap();
        let err = write_bytes(&file.join("below"), b"y").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn manifest_lists_sorted_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("x", 1, vec![3], 3);
        m.record(dir.path(), &dir.path().join("z.csv"));
        m.record(dir.path(), &dir.path().join("a.csv"));
        let p = m.write(dir.path()).unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert!(text.find("a.csv").unwrap() < text.find("z.csv").unwrap());
    }
}
