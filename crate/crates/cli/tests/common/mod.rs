#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aak::synthetic::synthetic_trees;

pub fn aak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aak"))
        .args(args)
        .env("AAK_THREADS", "1")
        .output()
        .expect("run aak")
}

pub fn aak_ok(args: &[&str]) -> Output {
    let out = aak(args);
    assert!(
        out.status.success(),
        "aak {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Synthetic trees `range` written one document per file into `dir`.
pub fn write_treebank(dir: &Path, range: std::ops::Range<usize>) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let trees = synthetic_trees(range.end);
    for (doc, tree) in &trees[range] {
        let path = dir.join(format!("{doc}.mrg"));
        let mut text = fs::read_to_string(&path).unwrap_or_default();
        text.push_str(tree);
        text.push('\n');
        fs::write(path, text).unwrap();
    }
    dir.to_path_buf()
}

pub fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
