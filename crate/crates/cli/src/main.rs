use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mige_core::harness::{self, Command, Overrides, RunConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_TOLERANCE: u8 = 3;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    Scorecheck,
    Toy,
    Gradcheck,
    RpAblation,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Scorecheck => Command::Scorecheck,
            CommandArg::Toy => Command::Toy,
            CommandArg::Gradcheck => Command::Gradcheck,
            CommandArg::RpAblation => Command::RpAblation,
        }
    }
}

/// Validation runs for the spectral mutual-information gradient estimator.
#[derive(Debug, Parser)]
#[command(name = "mige", version)]
struct Cli {
    #[arg(value_enum)]
    command: CommandArg,
    /// key=value file; flags take precedence over it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    /// comma-separated dimensions
    #[arg(long)]
    dims: Option<String>,
    /// comma-separated correlations in (-1, 1)
    #[arg(long = "rho-grid", allow_hyphen_values = true)]
    rho_grid: Option<String>,
    /// eigen-mass threshold in (0, 1]
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// comma-separated projection sizes
    #[arg(long = "rp-dims")]
    rp_dims: Option<String>,
    /// write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Io(String),
}

fn list<T: std::str::FromStr>(s: &Option<String>) -> Result<Option<Vec<T>>, Failure> {
    s.as_deref()
        .map(harness::parse_list)
        .transpose()
        .map_err(|e| Failure::Config(e.to_string()))
}

fn flags(cli: &Cli) -> Result<Overrides, Failure> {
    Ok(Overrides {
        seed: cli.seed,
        n: cli.n,
        dims: list(&cli.dims)?,
        rho_grid: list(&cli.rho_grid)?,
        mass_threshold: cli.threshold,
        bandwidth: cli.bandwidth,
        rp_dims: list(&cli.rp_dims)?,
        output_path: cli.out.clone(),
    })
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            Some(harness::parse_config_file(&text).map_err(|e| Failure::Config(e.to_string()))?)
        }
        None => None,
    };
    let cfg = RunConfig::resolve(cli.command.into(), file, flags(cli)?)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let outcome = harness::run(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    let csv = outcome.table.to_csv();
    match &cfg.output_path {
        Some(path) => fs::write(path, csv)
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?,
        None => io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Failure::Io(e.to_string()))?,
    }
    for f in &outcome.failures {
        eprintln!("tolerance: {f}");
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_TOLERANCE),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
