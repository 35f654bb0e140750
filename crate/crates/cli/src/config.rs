//! Resolved run settings: flags over config file over defaults.

use std::path::{Path, PathBuf};

use capver_core::{ProblemInstance, TypeDistribution};
use serde::Deserialize;

use crate::args::{Format, RunArgs};
use crate::error::CliError;

pub const DEFAULT_GRID: usize = 1001;

/// Same keys as the long flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub dist: Option<String>,
    pub phi: Option<f64>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("bad config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub dist: TypeDistribution,
    pub phi: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub bins: usize,
    pub grid: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    /// Unset instance fields default to the three-agent example.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let example = ProblemInstance::example();
        let dist = match args.dist.as_ref().or(file.dist.as_ref()) {
            Some(s) => s.parse().map_err(CliError::from)?,
            None => example.dist,
        };
        let grid = args.grid.or(file.grid).unwrap_or(DEFAULT_GRID);
        let bins = args.bins.or(file.bins).unwrap_or(64);
        if grid < 2 {
            return Err(CliError::validation(format!("--grid must be at least 2, got {grid}")));
        }
        if bins == 0 {
            return Err(CliError::validation("--bins must be positive"));
        }
        Ok(RunConfig {
            n: args.n.or(file.n).unwrap_or(example.n),
            m: args.m.or(file.m).unwrap_or(example.m),
            k: args.k.or(file.k).unwrap_or(example.k),
            dist,
            phi: args.phi.or(file.phi),
            trials: args.trials.or(file.trials).unwrap_or(1_000_000),
            seed: args.seed.or(file.seed).unwrap_or(0),
            bins,
            grid,
            out: args.out.clone().or(file.out),
            format: args.format.or(file.format).unwrap_or(Format::Table),
        })
    }

    pub fn instance(&self) -> Result<ProblemInstance, CliError> {
        Ok(ProblemInstance::new(self.n, self.m, self.k, self.dist)?)
    }
}
