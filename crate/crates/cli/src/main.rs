//! `genfrac`: kernels, Φ-exponentials, Volterra solves, Grönwall checks and
//! Monte Carlo from the command line.
//!
//! Every command except `catalog` writes CSV data, a JSON report and a JSON
//! manifest into the output directory (`--out`, else `$GENFRAC_OUT`, else
//! `./genfrac-out`). Exit status is 0 on success, 1 on numerical failure or a
//! failed verdict and 2 on usage errors.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{EigenArgs, GronwallArgs, KernelArgs, McArgs, SolveArgs};
use crate::output::OutDir;

#[derive(Debug, Parser)]
#[command(name = "genfrac", version, about = "Generalized Caputo calculus induced by Bernstein functions")]
struct Cli {
    /// Output directory for data files, reports and manifests.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the catalog of Bernstein functions, or describe one.
    Catalog {
        /// `stable:α`, `tempered:α,θ`, `mixture:w@α+…` or a TOML catalog file.
        #[arg(long)]
        phi: Option<String>,
    },
    /// Build and export a kernel table.
    Kernels(KernelArgs),
    /// Evaluate the Φ-exponential by series, inversion and Picard iteration.
    Eigen(EigenArgs),
    /// Solve a Cauchy problem from a problem file.
    Solve(SolveArgs),
    /// Check the Grönwall bounds on an instance file or random instances.
    Gronwall(GronwallArgs),
    /// Monte Carlo estimates from subordinator paths.
    Mc(McArgs),
}

fn run(cli: Cli) -> error::CliResult<()> {
    if let Command::Catalog { phi } = &cli.command {
        return commands::catalog(phi.as_deref());
    }
    let out = OutDir::resolve(cli.out)?;
    match cli.command {
        Command::Catalog { .. } => unreachable!("handled above"),
        Command::Kernels(a) => commands::kernels(&a, &out),
        Command::Eigen(a) => commands::eigen(&a, &out),
        Command::Solve(a) => commands::solve(&a, &out),
        Command::Gronwall(a) => commands::gronwall(&a, &out),
        Command::Mc(a) => commands::mc(&a, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("genfrac: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
