//! Ordered artifact sink. Commands stage their outputs here and nothing
//! touches the disk until the whole run has succeeded.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// First line of every CSV artifact.
pub const HASH_PREFIX: &str = "# config_hash=";

pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    seed: u64,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: &Path, hash: String, seed: u64) -> Self {
        Self { dir: dir.to_path_buf(), hash, seed, files: Vec::new() }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn stamp(&self) -> String {
        format!("{HASH_PREFIX}{}, seed={}", self.hash, self.seed)
    }

    fn push(&mut self, name: &str, bytes: Vec<u8>) {
        assert!(!self.files.iter().any(|(n, _)| n == name), "artifact {name} staged twice");
        self.files.push((name.to_string(), bytes));
    }

    /// CSV with the stamp line prepended.
    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut bytes = format!("{}\n", self.stamp()).into_bytes();
        body(&mut bytes).map_err(|e| CliError::io(&self.dir.join(name), e))?;
        self.push(name, bytes);
        Ok(())
    }

    /// JSON object with `config_hash` and `seed` fields added.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(&self.stamped(value)?).expect("json value serializes");
        bytes.push(b'\n');
        self.push(name, bytes);
        Ok(())
    }

    /// One stamped JSON object per line.
    pub fn json_lines<T: Serialize>(&mut self, name: &str, values: &[T]) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        for v in values {
            bytes.extend(serde_json::to_vec(&self.stamped(v)?).expect("json value serializes"));
            bytes.push(b'\n');
        }
        self.push(name, bytes);
        Ok(())
    }

    pub fn svg(&mut self, name: &str, render: impl FnOnce(&str) -> String) {
        let body = render(&format!("config_hash={} seed={}", self.hash, self.seed));
        self.push(name, body.into_bytes());
    }

    fn stamped<T: Serialize>(&self, value: &T) -> Result<Value, CliError> {
        let mut v = serde_json::to_value(value)
            .map_err(|e| CliError::Failed { code: "serialization", message: e.to_string() })?;
        match &mut v {
            Value::Object(map) => {
                map.insert("config_hash".into(), Value::String(self.hash.clone()));
                map.insert("seed".into(), Value::from(self.seed));
                Ok(v)
            }
            _ => Ok(serde_json::json!({ "config_hash": self.hash, "seed": self.seed, "value": v })),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Writes every staged file in staging order.
    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}
