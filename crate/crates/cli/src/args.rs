//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "capver",
    version,
    about = "Optimal allocation of identical objects with limited verification capacity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub run: RunArgs,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the optimal guarantee and report cutoffs, payoff and baselines.
    Solve,
    /// Calibrate the two-stage mechanism and check it by Monte Carlo.
    Simulate(SimulateArgs),
    /// Decide feasibility of an interim rule on a finite type space.
    Check(CheckArgs),
    /// Solve a grid of instances, one row each.
    Sweep(SweepArgs),
    /// Emit constraint curves and interim rules on a grid.
    PlotData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// Settings shared by every subcommand. Each may also come from `--config`;
/// flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Number of agents.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Number of objects.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Number of audits.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Type distribution: `uniform` or `power:<alpha>`.
    #[arg(long, global = true)]
    pub dist: Option<String>,
    /// Guarantee to use instead of the optimum.
    #[arg(long, global = true)]
    pub phi: Option<f64>,
    /// Monte Carlo trials.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Type bins for simulation reports and calibration.
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Points in plot grids.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Write output here instead of stdout (a directory for `plot-data`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// JSON file with any of the settings above.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Print a profile where truthful reporting is not a best response, and skip the simulation.
    #[arg(long)]
    pub epic_witness: bool,
    /// Sampled profiles used to calibrate lottery weights.
    #[arg(long, default_value_t = 1 << 23)]
    pub lottery_trials: u64,
    /// Sampled profiles used to calibrate audit weights.
    #[arg(long, default_value_t = 1 << 25)]
    pub audit_trials: u64,
    #[arg(long, default_value_t = 100)]
    pub max_rounds: usize,
    /// Stop calibrating once every bin is within this many standard errors.
    #[arg(long, default_value_t = 0.1)]
    pub z_stop: f64,
    /// Acceptance band half-width in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub band: f64,
    /// Bins that must fall inside the band (default: all but 1 in 32).
    #[arg(long)]
    pub min_within: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bundled {
    /// Two agents, two types, supply depending on the profile.
    Footnote,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Instance file (JSON).
    #[arg(long, required_unless_present = "bundled", requires = "rule")]
    pub instance: Option<PathBuf>,
    /// Interim rule file (JSON).
    #[arg(long)]
    pub rule: Option<PathBuf>,
    /// Use a bundled instance and rule.
    #[arg(long, value_enum, conflicts_with_all = ["instance", "rule"])]
    pub bundled: Option<Bundled>,
    /// Check only products of per-agent upper sets.
    #[arg(long)]
    pub upper_sets_only: bool,
    /// Refuse instances with more profiles than this.
    #[arg(long, default_value_t = 1 << 20)]
    pub max_profiles: usize,
    /// Unmet demand tolerated before declaring infeasibility.
    #[arg(long, default_value_t = 1e-12)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Agent counts, e.g. `3,5` or `3..6` (default: --n).
    #[arg(long)]
    pub ns: Option<String>,
    /// Object counts (default: --m).
    #[arg(long)]
    pub ms: Option<String>,
    /// Audit counts (default: 1..m-1 for each m).
    #[arg(long)]
    pub ks: Option<String>,
    /// Distributions separated by `;` or `,` (default: --dist).
    #[arg(long)]
    pub dists: Option<String>,
}
