use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use jtcse::{Error, Result};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub jtcse: &'static str,
    pub checkpoint_format: u32,
}

/// Record of one run: command, resolved settings, input digests, outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'static str,
    pub config: &'a C,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    pub versions: Versions,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    started: Instant,
    inputs: Vec<InputHash>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start() -> Self {
        Recorder {
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish<C: Serialize>(
        self,
        command: &'static str,
        config: &C,
        seed: Option<u64>,
        path: &Path,
    ) -> Result<()> {
        let manifest = RunManifest {
            command,
            config,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            versions: Versions {
                jtcse: env!("CARGO_PKG_VERSION"),
                checkpoint_format: jtcse::train::FORMAT_VERSION,
            },
        };
        jtcse::metrics::write_json(path, &manifest)
    }
}
