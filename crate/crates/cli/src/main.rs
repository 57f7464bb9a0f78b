use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

use commands::CliError;

/// Design, simulate and analyse two-ion separation ramps.
#[derive(Debug, Parser)]
#[command(name = "ionsep", version)]
pub struct Cli {
    /// Project configuration file (flat `key = value unit` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Directory receiving all outputs and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Worker threads for scans and chains (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Override a configuration key, e.g. `--set trajectory.duration=160us`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, quantize and export the separation waveform.
    Design {
        /// Write every n-th filter grid point to the preview.
        #[arg(long, default_value_t = 10)]
        preview_every: usize,
    },
    /// Simulate the design over a grid of one parameter.
    Scan {
        /// T (duration), dU_O (tilt) or dU_C_cp (cp-offset).
        #[arg(long)]
        axis: String,
        #[arg(long, allow_hyphen_values = true)]
        from: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        to: Option<String>,
        #[arg(long, default_value_t = 9)]
        points: usize,
        /// Explicit comma-separated grid; replaces --from/--to/--points.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        values: Option<Vec<String>>,
        /// Duration range of the exponential fit.
        #[arg(long)]
        fit_from: Option<String>,
        #[arg(long)]
        fit_to: Option<String>,
    },
    /// Simulate the configured design once.
    Simulate {
        /// Also export the recorded ion trajectory.
        #[arg(long)]
        trajectory: bool,
    },
    /// Sample the motional-state posterior of a Rabi dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit calibration or charging data.
    Fit {
        #[arg(value_enum)]
        kind: FitKind,
        #[arg(long)]
        data: PathBuf,
        /// Minutes of laser exposure at the start of a charging trace.
        #[arg(long)]
        on_minutes: Option<f64>,
        /// Per-point measurement uncertainty of a charging trace.
        #[arg(long, default_value = "0.6mV")]
        sigma: String,
        /// Write the configuration with the fitted values to this path.
        #[arg(long)]
        update_config: Option<PathBuf>,
    },
    /// Stray-field charging, compensation servo and tilt tolerance.
    Drift {
        #[arg(value_enum)]
        mode: DriftMode,
        /// Minutes of laser exposure.
        #[arg(long, default_value_t = 60.0)]
        on_minutes: f64,
        /// Total simulated minutes.
        #[arg(long, default_value_t = 150.0)]
        minutes: f64,
        /// Tilt window grid.
        #[arg(long, allow_hyphen_values = true, default_value = "-20mV")]
        from: String,
        #[arg(long, allow_hyphen_values = true, default_value = "20mV")]
        to: String,
        #[arg(long, default_value_t = 41)]
        points: usize,
        /// Bisection resolution of the window edges.
        #[arg(long, default_value = "0.1mV")]
        resolution: String,
    },
    /// Short tour through design, simulation, estimation and drift.
    Demo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    Alpha,
    Beta,
    Heating,
    Charging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DriftMode {
    Charging,
    Servo,
    Window,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(ionsep::Error::EmptyGrid | ionsep::Error::DegenerateScan(_)) => 2,
            CliError::Core(e) if e.is_input_error() => 4,
            CliError::Core(_) => 3,
        }
    }
}
