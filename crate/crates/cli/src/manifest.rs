//! Stage manifests and the workspace lock.
//!
//! A manifest records the hash of the stage's configuration and of every
//! input and output file. A stage whose manifest still matches is skipped.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sscl_core::workspace::Workspace;
use sscl_core::{sha256_hex, write_atomic};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::missing(format!("missing input {}", path.display())),
        _ => CliError::new(crate::error::ExitKind::Other, format!("{}: {e}", path.display())),
    })?;
    Ok(sha256_hex(&bytes))
}

fn hashes(paths: &[PathBuf]) -> CliResult<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((p.display().to_string(), file_hash(p)?))).collect()
}

/// A stage about to run: its identity, config and files.
pub struct StagePlan {
    pub stage: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    manifest_path: PathBuf,
}

pub enum Decision {
    Run(StagePlan),
    UpToDate(Manifest),
}

impl StagePlan {
    pub fn new(
        ws: &Workspace,
        stage: &str,
        config: &impl Serialize,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> CliResult<Self> {
        let config = serde_json::to_value(config).map_err(|e| CliError::config(e.to_string()))?;
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Ok(Self { stage: stage.to_string(), config, config_hash, inputs, outputs, manifest_path: ws.manifest(stage) })
    }

    /// Skip when the recorded manifest matches config, inputs and outputs.
    /// Without `force`, refuse to replace outputs that another run produced.
    pub fn decide(self, force: bool) -> CliResult<Decision> {
        let inputs = hashes(&self.inputs)?;
        if force {
            return Ok(Decision::Run(self));
        }
        if let Some(previous) = self.previous() {
            let outputs_intact = self
                .outputs
                .iter()
                .all(|p| file_hash(p).ok().as_ref() == previous.outputs.get(&p.display().to_string()));
            if previous.config_hash == self.config_hash && previous.inputs == inputs && outputs_intact {
                return Ok(Decision::UpToDate(previous));
            }
        }
        if let Some(existing) = self.outputs.iter().find(|p| p.exists()) {
            return Err(CliError::conflict(format!(
                "{} already exists from a different configuration or input; rerun with --force to replace it",
                existing.display()
            )));
        }
        Ok(Decision::Run(self))
    }

    fn previous(&self) -> Option<Manifest> {
        let text = std::fs::read_to_string(&self.manifest_path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn finish(self) -> CliResult<Manifest> {
        let manifest = Manifest {
            stage: self.stage,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config_hash,
            config: self.config,
            inputs: hashes(&self.inputs)?,
            outputs: hashes(&self.outputs)?,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::schema(e.to_string()))? + "\n";
        write_atomic(&self.manifest_path, text.as_bytes())?;
        Ok(manifest)
    }
}

/// Exclusive lock on a working directory, released on drop.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(ws: &Workspace) -> CliResult<Self> {
        let path = ws.lock_file();
        std::fs::create_dir_all(ws.root()).map_err(|e| CliError::new(crate::error::ExitKind::Other, e.to_string()))?;
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::conflict(format!(
                    "{} is locked by process {}; remove {} if that process is gone",
                    ws.root().display(),
                    holder.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::new(crate::error::ExitKind::Other, format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
