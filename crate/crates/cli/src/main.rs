use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinprobe_cli::config::EXTENDED_MIN_SPINS;
use spinprobe_cli::output::resolve_output_dir;
use spinprobe_cli::{parse_time_grid, CliError, ExperimentConfig, Mode, Overrides};

/// Probe-qubit parameter estimation on a Heisenberg spin chain.
#[derive(Parser)]
#[command(name = "spinprobe", version)]
struct Cli {
    #[command(subcommand)]
    mode: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimized F/T² with and without control over a grid of probing times.
    QfiSweep,
    /// Site populations along an optimized, constant or stored pulse.
    Populations,
    /// Repeated adaptive estimation runs and their measurement counts.
    Estimate,
    /// Two-spin closed forms compared with the simulator.
    Oracle,
    /// Checks F ≤ 4T² on random pulses.
    BoundCheck,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Self {
        match c {
            Command::QfiSweep => Mode::QfiSweep,
            Command::Populations => Mode::Populations,
            Command::Estimate => Mode::Estimate,
            Command::Oracle => Mode::Oracle,
            Command::BoundCheck => Mode::BoundCheck,
        }
    }
}

#[derive(Args)]
struct Flags {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    chain_length: Option<usize>,
    #[arg(long, global = true)]
    coupling: Option<f64>,
    /// Single probing time.
    #[arg(long, global = true, conflicts_with = "time_grid")]
    time: Option<f64>,
    /// Comma list `a,b,c` or range `start:stop:step`.
    #[arg(long, global = true)]
    time_grid: Option<String>,
    #[arg(long, global = true)]
    slots: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda_true: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda_init: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Allow long-running chains (N ≥ 10).
    #[arg(long, global = true)]
    extended: bool,
    /// Defaults to $SPINPROBE_OUTPUT_DIR, then ./spinprobe-output.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mode = Mode::from(cli.mode);
    let f = cli.flags;
    let mut config = match &f.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(file_mode) = config.mode {
        if file_mode != mode {
            eprintln!(
                "note: config file is for `{}`, running `{}`",
                file_mode.name(),
                mode.name()
            );
        }
    }
    config.apply(&Overrides {
        chain_length: f.chain_length,
        coupling: f.coupling,
        time: f.time,
        time_grid: f.time_grid.as_deref().map(parse_time_grid).transpose()?,
        slots: f.slots,
        lambda_true: f.lambda_true,
        lambda_init: f.lambda_init,
        epsilon: f.epsilon,
        restarts: f.restarts,
        seed: f.seed,
        runs: f.runs,
        extended: f.extended,
        output_dir: f.output_dir,
    });
    config.mode = Some(mode);
    config.validate(mode)?;

    let estimate = config.runtime_estimate(mode);
    if config.chain_length >= EXTENDED_MIN_SPINS || estimate > 60.0 {
        eprintln!("estimated runtime: about {:.0} s", estimate.ceil());
    }
    let out_dir = resolve_output_dir(&config);
    config.output_dir = Some(out_dir.clone());
    let report = spinprobe_cli::run(mode, &config, &out_dir)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code())
        }
    }
}
