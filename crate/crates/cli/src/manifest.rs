//! Record of every file a run has written, with content checksums.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use emulink::io::{sha256_hex, to_json_pretty};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub stage: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Version of the tool that wrote the run.
    pub version: String,
    /// SHA-256 of the resolved configuration.
    pub config_checksum: String,
    /// Keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunManifest {
    pub fn new(config_checksum: String) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_checksum,
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join(MANIFEST_FILE)
    }

    /// `Ok(None)` when the directory holds no manifest.
    pub fn load(out: &Path) -> CliResult<Option<Self>> {
        let path = Self::path(out);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m = serde_json::from_str(&text)
            .map_err(|e| CliError::Checksum(format!("{}: unreadable manifest: {e}", path.display())))?;
        Ok(Some(m))
    }

    pub fn save(&self, out: &Path) -> CliResult<()> {
        let path = Self::path(out);
        let text = to_json_pretty(self)?;
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    /// Writes `bytes` to `out/name` and records it.
    pub fn write(&mut self, out: &Path, name: &str, stage: &str, bytes: &[u8]) -> CliResult<()> {
        let path = out.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.artifacts.insert(
            name.to_string(),
            ArtifactEntry {
                sha256: sha256_hex(bytes),
                stage: stage.to_string(),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    /// Reads a recorded artifact, checking it is listed, present, and
    /// unchanged. `producer` names the stage that writes it.
    pub fn require(&self, out: &Path, name: &str, producer: &'static str) -> CliResult<Vec<u8>> {
        let path = out.join(name);
        let missing = || CliError::MissingArtifact {
            path: path.clone(),
            stage: producer,
        };
        let entry = self.artifacts.get(name).ok_or_else(missing)?;
        if !path.exists() {
            return Err(missing());
        }
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let sum = sha256_hex(&bytes);
        if sum != entry.sha256 {
            return Err(CliError::Checksum(format!(
                "{} has sha256 {sum}; manifest records {}",
                path.display(),
                entry.sha256
            )));
        }
        Ok(bytes)
    }

    /// Deletes the files written by any of `stages` and forgets them.
    pub fn remove_stages(&mut self, out: &Path, stages: &[&str]) -> CliResult<()> {
        for (name, entry) in &self.artifacts {
            let path = out.join(name);
            if stages.contains(&entry.stage.as_str()) && path.exists() {
                std::fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        self.artifacts.retain(|_, e| !stages.contains(&e.stage.as_str()));
        self.timings.retain(|s, _| !stages.contains(&s.as_str()));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn require_detects_missing_and_tampered_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let mut m = RunManifest::new("abc".into());
        assert!(matches!(
            m.require(out, "a.csv", "design"),
            Err(CliError::MissingArtifact { .. })
        ));
        m.write(out, "a.csv", "design", b"x,y\n1,2\n").unwrap();
        assert_eq!(m.require(out, "a.csv", "design").unwrap(), b"x,y\n1,2\n");
        std::fs::write(out.join("a.csv"), b"x,y\n1,3\n").unwrap();
        assert!(matches!(m.require(out, "a.csv", "design"), Err(CliError::Checksum(_))));
        std::fs::remove_file(out.join("a.csv")).unwrap();
        assert!(matches!(
            m.require(out, "a.csv", "design"),
            Err(CliError::MissingArtifact { .. })
        ));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("abc".into());
        m.write(dir.path(), "b.json", "fit", b"{}\n").unwrap();
        m.timings.insert("fit".into(), 0.25);
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), Some(m));
    }
}
