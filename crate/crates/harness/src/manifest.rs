//! Per-command record of what was run and what it wrote.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{HarnessError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub config_hash: Option<String>,
    pub code_version: String,
    pub seeds: Vec<u64>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: Option<String>, seeds: Vec<u64>) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            command: command.into(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").into(),
            seeds,
            timings: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.timings.insert(stage.into(), seconds);
    }

    /// Hashes `dir/name` and lists it.
    pub fn add_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let (sha256, bytes) = hash_file(&path)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.into(),
            sha256,
            bytes,
        });
        Ok(())
    }

    /// Writes `dir/<command>.manifest.json` and returns its file name.
    pub fn write(&self, dir: &Path) -> Result<String> {
        let name = format!("{}.manifest.json", self.command);
        let path = dir.join(&name);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| HarnessError::io(&path, e))?;
        Ok(name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::malformed(path, e.to_string()))
    }

    /// Files whose current contents no longer match the recorded hash.
    pub fn stale_files(&self, dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for f in &self.files {
            let path = dir.join(&f.path);
            match hash_file(&path) {
                Ok((h, _)) if h == f.sha256 => {}
                Ok(_) | Err(HarnessError::Io { .. }) => stale.push(f.path.clone()),
                Err(e) => return Err(e),
            }
        }
        Ok(stale)
    }
}

/// SHA-256 hex digest and length of a file.
pub fn hash_file(path: &Path) -> Result<(String, u64)> {
    let mut file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| HarnessError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex(&hasher.finalize()), total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_are_hashed_and_checked() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let mut m = RunManifest::new("demo", None, vec![1]);
        m.add_file(dir.path(), "a.txt").unwrap();
        m.add_file(dir.path(), "a.txt").unwrap();
        assert_eq!(m.files.len(), 1);
        // Known digest of "abc".
        assert_eq!(m.files[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.files[0].bytes, 3);
        let name = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::load(&dir.path().join(name)).unwrap(), m);
        assert!(m.stale_files(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.txt"), b"abd").unwrap();
        assert_eq!(m.stale_files(dir.path()).unwrap(), vec!["a.txt".to_string()]);
        assert!(m.add_file(dir.path(), "missing").is_err());
    }
}
