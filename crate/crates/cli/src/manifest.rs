//! Run manifests: flat `key = value` records of what ran and what it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use sidflow_core::Result;

use crate::config::RunConfig;

pub const FILE_NAME: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Package version plus the hash of the running executable.
pub fn build_id() -> &'static str {
    static ID: OnceLock<String> = OnceLock::new();
    ID.get_or_init(|| {
        let exe = std::env::current_exe().ok().and_then(|p| fs::read(p).ok());
        let hash = exe.map(|b| sha256_hex(&b)[..16].to_string()).unwrap_or_else(|| "unknown".into());
        format!("{}+{hash}", env!("CARGO_PKG_VERSION"))
    })
}

/// Collects the emitted files of one command run.
pub struct Run {
    pub out: PathBuf,
    command: String,
    files: Vec<PathBuf>,
    extra: Vec<(String, String)>,
}

impl Run {
    pub fn new(command: &str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Run {
            out: out.to_path_buf(),
            command: command.to_string(),
            files: Vec::new(),
            extra: Vec::new(),
        })
    }

    /// Writes `contents` to `out/rel` and records it.
    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        self.files.push(path.clone());
        Ok(path)
    }

    /// Records files some other routine already wrote.
    pub fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.files.extend(paths);
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.extra.push((key.to_string(), value.to_string()));
    }

    /// Writes `manifest.txt` with the resolved config and a SHA-256 per file.
    pub fn finish(self, config: &RunConfig) -> Result<PathBuf> {
        let mut text = format!("command = {}\nbuild = {}\nseed = {}\n", self.command, build_id(), config.get("seed"));
        for (k, v) in config.resolved() {
            text.push_str(&format!("config.{k} = {v}\n"));
        }
        for (k, v) in &self.extra {
            text.push_str(&format!("{k} = {v}\n"));
        }
        let mut files = self.files.clone();
        files.sort();
        files.dedup();
        for f in &files {
            let rel = f.strip_prefix(&self.out).unwrap_or(f);
            let rel = rel.to_string_lossy().replace('\\', "/");
            text.push_str(&format!("file.{rel} = sha256:{}\n", sha256_hex(&fs::read(f)?)));
        }
        let path = self.out.join(FILE_NAME);
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Parses a manifest back into ordered `(key, value)` pairs.
pub fn parse(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
