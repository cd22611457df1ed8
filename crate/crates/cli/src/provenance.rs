//! Provenance blocks: tool version, effective config and its hash, and
//! content hashes of every input.

use crate::config::CliConfig;
use crate::error::CliError;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const SIDECAR: &str = "provenance.json";

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub config: CliConfig,
    /// Input role -> sha256 of its content.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, config: &CliConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            config_sha256: config.sha256(),
            config: config.clone(),
            inputs: BTreeMap::new(),
        }
    }

    /// Records the hash of a file, or of every file under a directory.
    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(role.to_owned(), hash_path(path)?);
        Ok(())
    }

    pub fn input_value(&mut self, role: &str, value: &str) {
        self.inputs.insert(role.to_owned(), hex::encode(Sha256::digest(value.as_bytes())));
    }

    /// `body` (a JSON object) with a leading `provenance` member.
    pub fn embed<T: Serialize>(&self, body: &T) -> Result<Value, CliError> {
        let mut out = serde_json::Map::new();
        out.insert("provenance".into(), serde_json::to_value(self)?);
        match serde_json::to_value(body)? {
            Value::Object(m) => out.extend(m),
            other => {
                out.insert("result".into(), other);
            }
        }
        Ok(Value::Object(out))
    }

    /// One-line form for file headers.
    pub fn compact(&self) -> String {
        serde_json::json!({
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "config_sha256": self.config_sha256,
            "inputs": self.inputs,
        })
        .to_string()
    }

    /// Writes `provenance.json` into `dir` with the hash of every other
    /// top-level entry of `dir`.
    pub fn write_sidecar(&self, dir: &Path) -> Result<(), CliError> {
        let mut hashes = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name != SIDECAR {
                let h = hash_path(&dir.join(&name))?;
                hashes.insert(name, h);
            }
        }
        let v = self.embed(&serde_json::json!({ "outputs": hashes }))?;
        write_json(&dir.join(SIDECAR), &v)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// A file hashes its bytes; a directory hashes the sorted list of
/// `relative-path NUL file-hash` records of all files beneath it.
pub fn hash_path(path: &Path) -> Result<String, CliError> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut records = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::data(e.to_string()))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(path).expect("walk stays under root");
            records.push(format!("{}\0{}\n", rel.to_string_lossy().replace('\\', "/"), sha256_file(entry.path())?));
        }
    }
    records.sort();
    Ok(hex::encode(Sha256::digest(records.concat().as_bytes())))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
