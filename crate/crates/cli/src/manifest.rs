//! Provenance records written next to every output file.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub command: String,
    pub config: RunConfig,
    /// Input name → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub output_sha256: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut f = fs::File::open(path)?;
    io::copy(&mut f, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// `<file>.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl RunManifest {
    pub fn write(&self, output: &Path) -> io::Result<PathBuf> {
        let path = manifest_path(output);
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Manifest of `output`, if one exists.
    pub fn read_for(output: &Path) -> io::Result<Option<RunManifest>> {
        let path = manifest_path(output);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Collects input hashes while a command runs.
pub struct ManifestBuilder {
    command: String,
    config: RunConfig,
    inputs: BTreeMap<String, String>,
    started_at: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        ManifestBuilder {
            command: command.to_owned(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            started_at: Utc::now(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> io::Result<()> {
        self.inputs.insert(name.to_owned(), sha256_file(path)?);
        Ok(())
    }

    pub fn input_hash(&mut self, name: &str, hash: String) {
        self.inputs.insert(name.to_owned(), hash);
    }

    /// Writes `bytes` to `output` and its manifest beside it.
    pub fn emit(&self, output: &Path, bytes: &[u8]) -> io::Result<RunManifest> {
        if let Some(dir) = output.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(output, bytes)?;
        let m = RunManifest {
            engine_version: ENGINE_VERSION.to_owned(),
            command: self.command.clone(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            output_sha256: sha256_bytes(bytes),
            started_at: self.started_at,
            finished_at: Utc::now(),
        };
        m.write(output)?;
        Ok(m)
    }
}
