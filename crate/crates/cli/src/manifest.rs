//! Run manifests and staged outputs.
//!
//! Outputs are written to temporary siblings first. [`Run::finish`] writes
//! the manifest (itself through a temporary file and a rename) and only then
//! moves the outputs into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub version: String,
    /// Counts reported by the run (pairs kept, best epoch, ...).
    pub summary: Value,
}

pub struct Run {
    manifest: RunManifest,
    staged: Vec<(PathBuf, PathBuf)>,
    cleanup: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("{}: cannot read", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Regular files directly inside `dir`, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("{}: cannot read directory", dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn partial_name(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

impl Run {
    pub fn new() -> Self {
        Run {
            manifest: RunManifest {
                command: std::env::args().skip(1).collect(),
                config: Value::Null,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                summary: Value::Null,
            },
            staged: Vec::new(),
            cleanup: Vec::new(),
        }
    }

    /// Records the digest of a file, or of every file in a directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let meta = fs::metadata(path).with_context(|| format!("{}: no such file or directory", path.display()))?;
        let files = if meta.is_dir() { list_files(path)? } else { vec![path.to_path_buf()] };
        for f in files {
            let sha256 = sha256_file(&f)?;
            self.manifest.inputs.push(InputDigest {
                path: f.display().to_string(),
                sha256,
            });
        }
        Ok(())
    }

    pub fn config(&mut self, config: impl Serialize) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.to_string(), seed);
    }

    pub fn summary(&mut self, summary: impl Serialize) -> Result<()> {
        self.manifest.summary = serde_json::to_value(summary)?;
        Ok(())
    }

    /// Temporary path to write `output` to.
    pub fn stage(&mut self, output: &Path) -> Result<PathBuf> {
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("{}: cannot create directory", parent.display()))?;
        }
        let tmp = partial_name(output);
        self.staged.push((tmp.clone(), output.to_path_buf()));
        Ok(tmp)
    }

    /// Temporary directory whose files are moved into `dir` on finish.
    pub fn stage_dir(&mut self, dir: &Path) -> Result<PathBuf> {
        let tmp = dir.join(".partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp).with_context(|| format!("{}: cannot create directory", tmp.display()))?;
        self.cleanup.push(tmp.clone());
        Ok(tmp)
    }

    /// Registers every file written into a staged directory.
    pub fn adopt_dir(&mut self, tmp: &Path, dir: &Path) -> Result<()> {
        for f in list_files(tmp)? {
            let name = f.file_name().expect("listed files have names").to_owned();
            self.staged.push((f, dir.join(name)));
        }
        Ok(())
    }

    pub fn finish(mut self, manifest_path: &Path) -> Result<()> {
        self.manifest.outputs = self.staged.iter().map(|(_, p)| p.display().to_string()).collect();
        let tmp = partial_name(manifest_path);
        fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)? + "\n")
            .with_context(|| format!("{}: cannot write", tmp.display()))?;
        fs::rename(&tmp, manifest_path).with_context(|| format!("{}: cannot write", manifest_path.display()))?;
        for (tmp, out) in &self.staged {
            fs::rename(tmp, out).with_context(|| format!("{}: cannot write", out.display()))?;
        }
        for dir in &self.cleanup {
            fs::remove_dir_all(dir)?;
        }
        Ok(())
    }
}

/// `<out>.manifest.json` next to a single-file output.
pub fn manifest_for(output: &Path) -> PathBuf {
    let name = output.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{name}.manifest.json"))
}
