//! Atomic artifact writing.

use std::io::Write;
use std::path::{Path, PathBuf};

use apsde_core::CsvTable;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::config::Format;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub struct OutputSink {
    dir: PathBuf,
    formats: Vec<Format>,
    artifacts: Vec<Artifact>,
}

impl OutputSink {
    pub fn new(dir: impl Into<PathBuf>, formats: &[Format]) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            formats: formats.to_vec(),
            artifacts: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Skipped unless CSV output is enabled.
    pub fn csv(&mut self, name: &str, table: &CsvTable) -> std::io::Result<()> {
        if self.wants(Format::Csv) {
            self.put(name, table.to_csv().as_bytes())?;
        }
        Ok(())
    }

    /// Skipped unless JSON output is enabled.
    pub fn json(&mut self, name: &str, value: &serde_json::Value) -> std::io::Result<()> {
        if self.wants(Format::Json) {
            self.put(name, &to_pretty(value))?;
        }
        Ok(())
    }

    /// `report.json` lists every artifact written before it and is always written.
    pub fn finish(self, mut report: serde_json::Value) -> std::io::Result<PathBuf> {
        report["artifacts"] = serde_json::to_value(&self.artifacts).expect("artifacts serialize");
        let path = self.dir.join("report.json");
        write_atomic(&path, &to_pretty(&report))?;
        Ok(path)
    }
}

fn to_pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json serializes");
    out.push(b'\n');
    out
}
