//! Plain-text `key=value` stage manifests chained by SHA-256 content hashes.

use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Ordered entries of one stage manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(stage: &str, config_text: &str) -> Self {
        let mut m = Manifest::default();
        m.set("stage", stage);
        m.set("config_sha256", sha256_text(config_text));
        m
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Typed lookup that fails naming the manifest and key.
    pub fn require<T: std::str::FromStr>(&self, key: &str, source: &Path) -> CliResult<T> {
        let v = self
            .get(key)
            .ok_or_else(|| CliError::new("manifest", format!("{}: missing key {key}", source.display())))?;
        v.parse().map_err(|_| CliError::new("manifest", format!("{}: bad value for {key}: {v:?}", source.display())))
    }

    /// Records a file by name relative to `root` with its hash.
    pub fn record(&mut self, prefix: &str, root: &Path, path: &Path) -> CliResult<()> {
        let name = path.strip_prefix(root).unwrap_or(path).display().to_string();
        self.set(format!("{prefix}.{name}"), sha256_file(path)?);
        Ok(())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let entries =
            text.lines().filter_map(|l| l.split_once('=')).map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Manifest { entries }
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.render()).map_err(|e| CliError::io(path, e))
    }
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub const FILE: &'static str = ".qshws.lock";

    pub fn acquire(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                "locked",
                format!("{} exists; another qshws command is using this run directory", path.display()),
            )),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
