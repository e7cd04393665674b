use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::FlatMap;
use crate::error::CliResult;
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(Artifact { path: path.to_path_buf(), sha256: io::sha256_file(path)? })
    }
}

/// Record of one invocation, written next to its outputs. Feeding it back
/// through `--config` replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub subcommand: String,
    /// Fully resolved configuration as dotted keys.
    pub config: FlatMap,
    /// Subcommand arguments (paths, task, axis, ...).
    pub args: FlatMap,
    pub seed: u64,
    pub threads: usize,
    pub inputs: BTreeMap<String, Artifact>,
    pub outputs: BTreeMap<String, Artifact>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: FlatMap, args: FlatMap, seed: u64, threads: usize) -> Self {
        RunManifest {
            tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            subcommand: subcommand.to_string(),
            config,
            args,
            seed,
            threads,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            duration_secs: 0.0,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> CliResult<()> {
        self.inputs.insert(name.to_string(), Artifact::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) -> CliResult<()> {
        self.outputs.insert(name.to_string(), Artifact::of(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        io::write_json(&path, self)?;
        Ok(path)
    }
}
