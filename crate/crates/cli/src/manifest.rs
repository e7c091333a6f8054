//! Per-run manifest: what was run, on which inputs, with which config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// SHA-256 of the `config.json` written next to the manifest.
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub started: String,
    pub finished: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// An output directory being filled by one command.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    started: String,
    inputs: Vec<InputDigest>,
    config_sha256: Option<String>,
}

impl RunDir {
    pub fn create(path: &Path, inputs: &[PathBuf]) -> CliResult<RunDir> {
        let inputs = inputs.iter().map(|p| digest_file(p)).collect::<CliResult<Vec<_>>>()?;
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        Ok(RunDir {
            path: path.to_path_buf(),
            started: now(),
            inputs,
            config_sha256: None,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.file(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_config<T: Serialize>(&mut self, config: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(config)
            .map_err(|e| CliError::Usage(format!("serializing config: {e}")))?;
        text.push('\n');
        self.write_bytes(CONFIG_FILE, text.as_bytes())?;
        self.config_sha256 = Some(sha256_hex(text.as_bytes()));
        Ok(())
    }

    pub fn finish(self, command: &str, seed: Option<u64>) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            schema_version: 1,
            command: command.to_string(),
            config_sha256: self.config_sha256.clone().unwrap_or_default(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs.clone(),
            started: self.started.clone(),
            finished: now(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Usage(format!("serializing manifest: {e}")))?;
        text.push('\n');
        self.write_bytes(MANIFEST_FILE, text.as_bytes())?;
        Ok(manifest)
    }
}

/// Read a run directory's manifest and check its config hash.
pub fn verify(dir: &Path) -> CliResult<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let config = dir.join(CONFIG_FILE);
    let bytes = fs::read(&config).map_err(|e| CliError::io(&config, e))?;
    if sha256_hex(&bytes) != manifest.config_sha256 {
        return Err(CliError::Usage(format!(
            "{}: config hash does not match manifest",
            config.display()
        )));
    }
    Ok(manifest)
}
