use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crsfl::cli::{self, SweepKey, EXIT_REFUSED};
use crsfl::config::keys_help;

/// Federated-learning simulator with CRS gradient compression.
///
/// Set CRSFL_THREADS to cap the worker pool. Exit codes: 0 success,
/// 1 rejected configuration or privacy request, 2 runtime failure.
#[derive(Parser)]
#[command(name = "crsfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its per-round CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV path; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report admissible CRS parameters and the delta bound.
    Privacy {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long = "K", requires = "p")]
        k: Option<usize>,
        #[arg(long)]
        d: usize,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// K (integer or percentage of d such as 0.7%), epsilon or clients.
        #[arg(long)]
        key: SweepKey,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let help = keys_help();
    let command = Cli::command()
        .mut_subcommand("run", |c| c.after_help(help.clone()))
        .mut_subcommand("sweep", |c| c.after_help(help.clone()));
    let parsed = command
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_REFUSED as u8) } else { ExitCode::SUCCESS };
        }
    };
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let code = match cli.command {
        Command::Run { config, out: path } => cli::cmd_run(&config, path.as_deref(), &mut out, &mut err),
        Command::Privacy { epsilon, p, k, d } => cli::cmd_privacy(epsilon, p, k, d, &mut out),
        Command::Sweep {
            config,
            key,
            values,
            out_dir,
        } => cli::cmd_sweep(&config, key, &values, &out_dir, &mut out, &mut err),
    };
    ExitCode::from(code as u8)
}
