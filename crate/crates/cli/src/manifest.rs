use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Everything needed to reproduce a run's outputs. Holds no timestamps or
/// host details, so identical runs produce identical manifests up to the
/// recorded paths.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    /// SHA-256 of the effective configuration serialized as JSON.
    pub config_sha256: String,
    pub config: RunConfig,
    pub versions: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub struct ManifestBuilder {
    manifest: Manifest,
    out_dir: PathBuf,
}

impl ManifestBuilder {
    pub fn new(
        command: &str,
        argv: &[String],
        config: &RunConfig,
        out_dir: &Path,
    ) -> Result<Self, CliError> {
        let config_json = serde_json::to_vec(config)?;
        let versions = BTreeMap::from([
            ("poe-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("poe-core".to_string(), poe_core::VERSION.to_string()),
        ]);
        Ok(Self {
            manifest: Manifest {
                command: command.to_string(),
                argv: argv.to_vec(),
                seed: config.seed,
                config_sha256: sha256_bytes(&config_json),
                config: config.clone(),
                versions,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Writes `bytes` to `name` inside the output directory and records its hash.
    pub fn output(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::from(e).context(path.display()))?;
        self.manifest
            .outputs
            .insert(name.to_string(), sha256_bytes(bytes));
        Ok(path)
    }

    pub fn finish(self) -> Result<Manifest, CliError> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| CliError::from(e).context(path.display()))?;
        Ok(self.manifest)
    }
}
