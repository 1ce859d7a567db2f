use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use psa_core::PsaError;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::RunConfig;

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

/// Inputs, outputs and timings of one run, written as
/// `<command>.manifest.json` in the output directory.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool_version: &'static str,
    pub command: &'static str,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub timings: Vec<Timing>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    #[serde(skip)]
    out_dir: PathBuf,
    #[serde(skip)]
    clock: Instant,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), PsaError> {
    let bytes = fs::read(path).map_err(|e| PsaError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

impl Manifest {
    pub fn new(command: &'static str, config: RunConfig, out_dir: &Path) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            summary: serde_json::Map::new(),
            out_dir: out_dir.to_path_buf(),
            clock: Instant::now(),
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<String, PsaError> {
        let (sha256, bytes) = sha256_file(path)?;
        self.inputs.push(FileRecord {
            path: path.to_path_buf(),
            sha256: sha256.clone(),
            bytes,
        });
        Ok(sha256)
    }

    /// Records a file already written under the output directory.
    pub fn output(&mut self, name: &str) -> Result<(), PsaError> {
        let (sha256, bytes) = sha256_file(&self.out(name))?;
        log::info!("wrote {}", self.out(name).display());
        self.outputs.push(FileRecord {
            path: PathBuf::from(name),
            sha256,
            bytes,
        });
        Ok(())
    }

    /// Records the time since the previous lap.
    pub fn lap(&mut self, step: &str) {
        let seconds = self.clock.elapsed().as_secs_f64();
        self.clock = Instant::now();
        log::info!("{step}: {seconds:.2}s");
        self.timings.push(Timing {
            step: step.to_string(),
            seconds,
        });
    }

    pub fn note(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), PsaError> {
        let path = self.out(name);
        fs::write(&path, text).map_err(|e| PsaError::Io { path, source: e })?;
        self.output(name)
    }

    /// Writes `<command>.config.json` and `<command>.manifest.json`.
    pub fn finish(self) -> Result<(), PsaError> {
        let config_path = self.out(&format!("{}.config.json", self.command));
        fs::write(&config_path, pretty(&self.config)).map_err(|e| PsaError::Io {
            path: config_path,
            source: e,
        })?;
        let manifest_path = self.out(&format!("{}.manifest.json", self.command));
        fs::write(&manifest_path, pretty(&self)).map_err(|e| PsaError::Io {
            path: manifest_path,
            source: e,
        })?;
        Ok(())
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}
