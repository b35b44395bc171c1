//! Run directories: every file is written once through a temp file and a
//! rename, and hashed into `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Command};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl OutputDir {
    /// Create `root` if needed. An existing non-empty directory is refused
    /// unless `force` is set.
    pub fn create(root: &Path, force: bool) -> Result<Self, CliError> {
        if root.exists() {
            if !root.is_dir() {
                return Err(CliError::Usage(format!("{} is not a directory", root.display())));
            }
            if !force && fs::read_dir(root)?.next().is_some() {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty (use --force)",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Atomically write `rel` (a `/`-separated path under the root).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.root.join(rel);
        let dir = target.parent().expect("relative path under root");
        fs::create_dir_all(dir)?;
        let name = target.file_name().expect("file name").to_string_lossy();
        let tmp = dir.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        self.files.insert(
            rel.to_string(),
            FileEntry {
                path: rel.to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn files(&self) -> impl Iterator<Item = &FileEntry> {
        self.files.values()
    }

    /// Write the manifest listing every file emitted so far.
    pub fn finish(mut self, command: Command, seed: u64) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            command: command.name().to_string(),
            seed,
            files: self.files.values().cloned().collect(),
        };
        self.write_json(MANIFEST, &manifest)?;
        Ok(manifest)
    }
}

pub fn read_manifest(root: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(root.join(MANIFEST))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{MANIFEST}: {e}")))
}
