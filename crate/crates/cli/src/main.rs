use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sketchloc_cli::commands;
use sketchloc_cli::config::RunConfig;
use sketchloc_cli::CliError;

/// Localization on hand-drawn maps: replay logs through the scale-tracking
/// particle filter, simulate runs, learn sensor parameters, and evaluate
/// room-level success.
#[derive(Parser)]
#[command(name = "sketchloc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration (defaults apply for missing keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Launch this many runs with consecutive seeds.
    #[arg(long, global = true)]
    runs: Option<usize>,

    /// Worker threads for batch runs.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,

    /// Render an overlay frame every N scans (localize only; 0 = off).
    #[arg(long, global = true)]
    render_stride: Option<usize>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a sensor log against a sketch map.
    Localize,
    /// Generate a sensor log from the 2D simulator.
    Simulate,
    /// Fit beam-model parameters from a calibration CSV.
    Learn,
    /// Aggregate localize results into success tables.
    Eval,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(stride) = cli.render_stride {
        cfg.localize.render_stride = stride;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let single: fn(&RunConfig) -> Result<Vec<PathBuf>, CliError> = match cli.command {
        Command::Localize => commands::cmd_localize,
        Command::Simulate => commands::cmd_simulate,
        Command::Learn => commands::cmd_learn,
        Command::Eval => commands::cmd_eval,
    };
    let artifacts = match cli.runs {
        Some(runs) if runs > 1 => commands::run_batch(&cfg, runs, cli.parallel, single)?,
        _ => single(&cfg)?,
    };
    for path in artifacts {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("sketchloc: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
