//! Output directory bookkeeping: every command ends by writing a
//! `manifest.json` listing the files it produced with their SHA-256 hashes.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects written files and their hashes.
#[derive(Default)]
pub struct Manifest {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    /// Write a file into the output directory and record its hash.
    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(path)
    }

    /// Finalize: write `manifest.json` itself.
    pub fn finish(self) -> std::io::Result<()> {
        let body = serde_json::json!({ "files": self.files });
        let text = serde_json::to_string_pretty(&body).expect("manifest serializes");
        fs::write(self.dir.join("manifest.json"), text)
    }
}
