//! Artifact bookkeeping: every file a command writes is listed with its
//! SHA-256, alongside wall-clock stage timings. The manifest is the one
//! artifact allowed to differ between reruns (timings); everything it
//! points at is byte-reproducible.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub jobs: usize,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings_ms: Vec<StageTiming>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

/// Collects artifacts, writes them under `dir`, then writes the manifest
/// itself as `manifest.json`. Returns the manifest.
pub struct ArtifactWriter<'a> {
    dir: &'a Path,
    entries: Vec<ArtifactEntry>,
}

impl<'a> ArtifactWriter<'a> {
    pub fn new(dir: &'a Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::stage("emit", format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::stage("emit", format!("{}: {e}", path.display())))?;
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len(),
        });
        Ok(())
    }

    pub fn finish(
        mut self,
        config_hash: &str,
        jobs: usize,
        timings_ms: &[(String, u128)],
    ) -> Result<RunManifest, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            jobs,
            artifacts: self.entries,
            timings_ms: timings_ms
                .iter()
                .map(|(stage, ms)| StageTiming {
                    stage: stage.clone(),
                    ms: *ms as u64,
                })
                .collect(),
        };
        let mut body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::stage("emit", e))?;
        body.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, body)
            .map_err(|e| CliError::stage("emit", format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_and_abc_match_published_digests() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn writer_lists_every_file_with_matching_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("b.txt", b"beta").unwrap();
        w.write("a.txt", b"alpha").unwrap();
        let manifest = w
            .finish("cafe", 2, &[("train".to_string(), 12u128)])
            .unwrap();
        assert_eq!(manifest.artifacts.len(), 2);
        // Sorted by path.
        assert_eq!(manifest.artifacts[0].path, "a.txt");
        assert_eq!(manifest.artifacts[0].sha256, sha256_hex(b"alpha"));
        assert_eq!(manifest.artifacts[1].bytes, 4);
        assert_eq!(manifest.jobs, 2);
        // Every file on disk except the manifest itself is listed.
        let mut on_disk: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "manifest.json")
            .collect();
        on_disk.sort();
        let listed: Vec<&str> = manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(on_disk, listed);
        // The manifest file itself parses back.
        let raw = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let back: RunManifest = serde_json::from_str(&raw).unwrap();
        assert_eq!(back, manifest);
    }
}
