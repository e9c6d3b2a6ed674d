//! Command-line entry point. Exit codes: 0 success, 1 run or convergence
//! failure, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use otmap_cli::config;
use otmap_cli::experiment::{self, Failure, SweepParam};

#[derive(Parser)]
#[command(name = "otmap", about = "Monge-Ampère optimal transport on a grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configured problem and write its outputs.
    Run {
        /// TOML config file; `preset = "<name>"` layers it over a built-in.
        config: PathBuf,
    },
    /// Solve the same problem across a list of parameter values and write
    /// a results table.
    Sweep {
        /// TOML config file the sweep starts from.
        config: PathBuf,
        /// Which parameter to vary.
        #[arg(long, value_enum)]
        param: Param,
        /// Values to sweep over.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<i64>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    N,
    Width,
}

impl From<Param> for SweepParam {
    fn from(p: Param) -> Self {
        match p {
            Param::N => SweepParam::N,
            Param::Width => SweepParam::Width,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_override = std::env::var_os("OTMAP_OUT").map(PathBuf::from);

    match cli.command {
        Command::Run { config } => {
            let cfg = match config::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return fail_config(&e.to_string()),
            };
            match experiment::run(&cfg, out_override.as_deref()) {
                Ok(summary) => {
                    println!(
                        "{}: {} after {} iterations, residual {:.3e}",
                        summary.tag, summary.stop, summary.iterations, summary.res_inf
                    );
                    if summary.converged {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let cfg = match config::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return fail_config(&e.to_string()),
            };
            match experiment::sweep(&cfg, param.into(), &values, out_override.as_deref()) {
                Ok(path) => {
                    println!("{} rows -> {}", values.len(), path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Presets => {
            for name in config::PRESETS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn fail(e: Failure) -> ExitCode {
    eprintln!("{e}");
    match e {
        Failure::Config(_) => ExitCode::from(2),
        Failure::Run(_) => ExitCode::from(1),
    }
}

fn fail_config(msg: &str) -> ExitCode {
    eprintln!("configuration error: {msg}");
    ExitCode::from(2)
}
