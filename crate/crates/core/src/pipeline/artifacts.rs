//! Stage interchange files, written all-or-nothing.
//!
//! Files are first written into a hidden staging directory next to the
//! output and renamed into place only once every write succeeded, so a
//! failed command leaves no partial output behind.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const RECORDS_FILE: &str = "records.ndjson";
pub const STATS_FILE: &str = "ingest_stats.json";
pub const FEATURES_FILE: &str = "features.json";
pub const IDENTIFIED_FILE: &str = "candidates.json";
pub const CORRECTED_FILE: &str = "corrected.json";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONFIRMED_FILE: &str = "confirmed.csv";

/// A staging directory that becomes visible output on [`Artifacts::commit`].
#[derive(Debug)]
pub struct Artifacts {
    out: PathBuf,
    staging: PathBuf,
    names: Vec<String>,
    committed: bool,
}

impl Artifacts {
    pub fn stage(out: &Path) -> Result<Self> {
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let leaf = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let staging = parent.join(format!(".{leaf}.staging-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Artifacts {
            out: out.to_path_buf(),
            staging,
            names: Vec::new(),
            committed: false,
        })
    }

    /// Staged location for `name`; the file counts as output once committed.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.names.iter().any(|n| n == name) {
            self.names.push(name.to_string());
        }
        self.staging.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let json = serde_json::to_string_pretty(value).expect("artifact serializes");
        self.write(name, json + "\n")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Move every staged file into the output directory.
    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let mut done = Vec::new();
        for name in &self.names {
            let from = self.staging.join(name);
            let to = self.out.join(name);
            std::fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            done.push(to);
        }
        self.committed = true;
        let _ = std::fs::remove_dir_all(&self.staging);
        Ok(done)
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(what, path, e))
}
