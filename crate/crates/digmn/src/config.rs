//! Run configuration as flat dotted keys (`model.d`, `train.lr`, ...).
//!
//! Every key has a default taken from the library's config types. A config
//! file may be a flat or nested JSON object, or a run manifest, whose
//! resolved configuration and arguments are reused.

use std::collections::BTreeMap;
use std::path::Path;

use digmn_core::digmn::DigmnConfig;
use digmn_core::lda::{SelectKParams, DEFAULT_ALPHA};
use digmn_core::syngen::GeneratorConfig;
use digmn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub type FlatMap = BTreeMap<String, Value>;

/// Intent-mining settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    /// Candidate topic counts, deduplicated before fitting.
    pub k_values: Vec<usize>,
    pub iterations: usize,
    pub inference_iterations: usize,
    /// Document-topic prior; `null` means 50 / k.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub holdout_fraction: f64,
    pub restarts: usize,
    /// Sessions are subsampled to at most this many documents (`null` keeps all).
    pub max_documents: Option<usize>,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        let p = SelectKParams::default();
        MineConfig {
            k_values: (2..=10).collect(),
            iterations: p.iterations,
            inference_iterations: p.inference_iterations,
            alpha: Some(DEFAULT_ALPHA),
            eta: p.eta,
            holdout_fraction: p.holdout_fraction,
            restarts: p.restarts,
            max_documents: Some(20_000),
            seed: 0,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, why: &str| Err(CliError::config(format!("mine.{field}: {why}")));
        if self.k_values.is_empty() {
            return bad("k_values", "must list at least one k");
        }
        if self.k_values.iter().any(|&k| !(1..=64).contains(&k)) {
            return bad("k_values", "every k must be in 1..=64");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if self.inference_iterations == 0 {
            return bad("inference_iterations", "must be at least 1");
        }
        if self.alpha.is_some_and(|a| !(a > 0.0 && a.is_finite())) {
            return bad("alpha", "must be positive or null");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be positive");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction", "must be in (0, 1)");
        }
        if self.restarts == 0 {
            return bad("restarts", "must be at least 1");
        }
        if self.max_documents == Some(0) {
            return bad("max_documents", "must be positive or null");
        }
        Ok(())
    }

    pub fn select_k_params(&self) -> SelectKParams {
        SelectKParams {
            iterations: self.iterations,
            inference_iterations: self.inference_iterations,
            alpha: self.alpha,
            eta: self.eta,
            holdout_fraction: self.holdout_fraction,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub mine: MineConfig,
    pub model: DigmnConfig,
    pub train: TrainConfig,
}

/// Flattens nested objects into dotted keys; arrays and scalars are leaves.
pub fn flatten(value: &Value) -> FlatMap {
    fn walk(prefix: &str, v: &Value, out: &mut FlatMap) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = FlatMap::new();
    walk("", value, &mut out);
    out
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = node.as_object_mut().expect("config sections are objects");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return;
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Parses a `--set` value: JSON when it parses, otherwise a bare string.
pub fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

impl RunConfig {
    pub fn to_flat(&self) -> FlatMap {
        flatten(&serde_json::to_value(self).expect("config serialises"))
    }

    /// Applies one dotted key, rejecting unknown keys and ill-typed values
    /// with a message naming the key.
    pub fn set(&mut self, key: &str, value: Value) -> CliResult<()> {
        let known = self.to_flat();
        if !known.contains_key(key) {
            let section = key.split('.').next().unwrap_or_default();
            let hint: Vec<&str> = known.keys().filter(|k| k.starts_with(section)).map(String::as_str).collect();
            return Err(CliError::config(if hint.is_empty() {
                format!("unknown key `{key}`")
            } else {
                format!("unknown key `{key}` (known: {})", hint.join(", "))
            }));
        }
        let mut tree = serde_json::to_value(&*self).expect("config serialises");
        set_path(&mut tree, key, value.clone());
        *self = serde_json::from_value(tree).map_err(|e| CliError::config(format!("`{key}` = {value}: {e}")))?;
        Ok(())
    }

    pub fn apply(&mut self, flat: &FlatMap) -> CliResult<()> {
        flat.iter().try_for_each(|(k, v)| self.set(k, v.clone()))
    }

    /// Applies `key=value` overrides.
    pub fn apply_assignments(&mut self, assignments: &[String]) -> CliResult<()> {
        for a in assignments {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override `{a}` is not KEY=VALUE")))?;
            self.set(k.trim(), parse_value(v.trim()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let section = |name: &str, r: digmn_core::Result<()>| r.map_err(|e| CliError::config(format!("{name}: {e}")));
        section("generator", self.generator.validate())?;
        self.mine.validate()?;
        section("model", self.model.validate())?;
        section("train", self.train.validate())
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub config: FlatMap,
    /// Subcommand arguments, present when the file is a run manifest.
    pub args: FlatMap,
    pub manifest_subcommand: Option<String>,
}

pub fn load_config_file(path: &Path) -> CliResult<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: not valid JSON: {e}", path.display())))?;
    let Value::Object(map) = &value else {
        return Err(CliError::config(format!("{}: config must be a JSON object", path.display())));
    };
    if let (Some(sub), Some(config)) = (map.get("subcommand"), map.get("config")) {
        return Ok(ConfigFile {
            config: flatten(config),
            args: map.get("args").map(flatten).unwrap_or_default(),
            manifest_subcommand: sub.as_str().map(str::to_string),
        });
    }
    Ok(ConfigFile { config: flatten(&value), ..Default::default() })
}
