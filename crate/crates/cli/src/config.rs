//! JSON run configuration. Every field is optional; command-line flags
//! override it, and it overrides `DMF_SEED` and built-in defaults.

use std::path::{Path, PathBuf};

use dmf_core::checkpoint::ModelKind;
use dmf_core::dataio::NormalizeMode;
use dmf_core::geograph::{WalkMode, WalkScale};
use serde::Deserialize;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "DMF_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    Constant,
    Gaussian,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkins: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,

    pub seed: Option<u64>,
    pub split: Option<f64>,
    pub mode: Option<NormalizeMode>,
    pub min_interactions: Option<usize>,
    pub max_interactions: Option<usize>,
    pub skip_malformed: Option<bool>,

    pub n: Option<usize>,
    pub f: Option<MappingKind>,
    pub sigma: Option<f64>,

    pub model: Option<ModelKind>,
    pub k: Option<usize>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub d: Option<usize>,
    pub m: Option<usize>,
    pub t: Option<usize>,
    pub freeze_q: Option<bool>,
    pub walk_mode: Option<WalkMode>,
    pub walk_scale: Option<WalkScale>,
    pub neg_same_city: Option<bool>,
    pub checkpoint_every: Option<usize>,

    pub k_values: Option<Vec<usize>>,
    pub city_candidates: Option<bool>,

    pub beta_grid: Option<Vec<f64>>,
    pub gamma_grid: Option<Vec<f64>>,
    pub d_grid: Option<Vec<usize>>,
    pub k_grid: Option<Vec<usize>>,

    pub cities: Option<usize>,
    pub users: Option<usize>,
    pub items: Option<usize>,
    pub groups: Option<usize>,
    pub p_in: Option<f64>,
    pub p_out: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    /// Flag, then config file, then `DMF_SEED`, then the default.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }
}

/// First present value, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// A boolean switch is on if either the flag or the config file turns it on.
pub fn switch(flag: bool, file: Option<bool>) -> bool {
    flag || file.unwrap_or(false)
}

/// A path that must come from a flag or the config file.
pub fn require_path(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| file.clone()).ok_or_else(|| CliError::usage(format!("missing --{name}")))
}
