//! Library side of the `weakprobe` command-line tool.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::CmdResult;
use crate::config::RunConfig;
use crate::report::{Format, Report};

#[derive(Debug, Parser)]
#[command(name = "weakprobe", version, about = "Ancilla-based current measurement simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; the report goes to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum Command {
    /// Ground-state energy, gap and exact current tables.
    GroundState,
    /// Probe sweeps and extracted currents, variances, loops or correlations.
    Probe,
    /// Exact and extracted chiral current and mean variance over a K/U grid.
    PhaseScan,
    /// Spin-current extraction through a thermal phonon mode.
    TrappedIon,
    /// Checks a configuration without running it.
    ValidateConfig,
}

pub fn run_command(command: Command, cfg: &RunConfig) -> CmdResult<Report> {
    match command {
        Command::GroundState => commands::cmd_ground_state(cfg),
        Command::Probe => commands::cmd_probe(cfg),
        Command::PhaseScan => commands::cmd_phase_scan(cfg),
        Command::TrappedIon => commands::cmd_trapped_ion(cfg),
        Command::ValidateConfig => commands::cmd_validate(cfg),
    }
}

/// Runs the parsed command line and returns what should go to stdout.
pub fn run(cli: &Cli) -> CmdResult<String> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let path = cli.config.as_ref().ok_or("--config is required")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let report = run_command(cli.command, &cfg)?;
    match &cli.out {
        Some(dir) => {
            let files = report.write(dir, cli.format)?;
            let mut out = String::new();
            for m in &report.messages {
                out.push_str(&format!("note: {m}\n"));
            }
            for f in files {
                out.push_str(&format!("wrote {}\n", f.display()));
            }
            Ok(out)
        }
        None => Ok(report.render(cli.format)),
    }
}
