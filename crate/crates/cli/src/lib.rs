//! Command-line front end: `solve`, `simulate`, `check`, `sweep` and `plot-data`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 infeasible rule or failed simulation
//! check, 3 internal or numerical failure.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;

use args::{Cli, Command};
use config::RunConfig;
pub use error::{CliError, EXIT_INTERNAL, EXIT_OK, EXIT_VALIDATION, EXIT_VIOLATION};
use output::Output;

/// Runs one subcommand and returns its result without writing anything.
pub fn execute(cli: &Cli) -> Result<(RunConfig, Output), CliError> {
    let cfg = RunConfig::resolve(&cli.run)?;
    let out = match &cli.command {
        Command::Solve => commands::solve(&cfg)?,
        Command::Simulate(a) => commands::simulate(&cfg, a)?,
        Command::Check(a) => commands::check(a)?,
        Command::Sweep(a) => commands::sweep(&cfg, a)?,
        Command::PlotData => commands::plot_data(&cfg)?,
    };
    Ok((cfg, out))
}

/// Executes, writes the output and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("cannot size the thread pool: {e}");
        }
    }
    let result = execute(cli).and_then(|(cfg, out)| {
        write_output(cli, &cfg, &out)?;
        Ok(out.code)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn write_output(cli: &Cli, cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    match &cfg.out {
        Some(dir) if matches!(cli.command, Command::PlotData) => out.write_csv_dir(dir),
        Some(path) => Ok(std::fs::write(path, out.render(cfg.format)?)?),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(out.render(cfg.format)?.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}
