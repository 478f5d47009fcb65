use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wres_cli::{compute, oracle, parse_target, verify, Outcome, EXIT_USAGE};
use wres_core::invariant_forms::{Format, Target};

#[derive(Parser)]
#[command(name = "wres", about = "Noncommutative residues of commutator products with the Dirac operator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// i, ii, iii, iv or cocycle
    #[arg(long, value_parser = target)]
    part: Target,
    /// Even dimension
    #[arg(long)]
    dim: u32,
    /// Write the output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a residue density
    Compute {
        #[command(flatten)]
        common: Common,
        /// latex, json or jets
        #[arg(long, default_value = "latex", value_parser = format)]
        format: Format,
    },
    /// Recompute and compare with the embedded expectations
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Compare with the numeric brute-force residue
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

fn target(s: &str) -> Result<Target, String> {
    parse_target(s).ok_or_else(|| format!("unknown part `{}`", s))
}

fn format(s: &str) -> Result<Format, String> {
    Format::parse(s).ok_or_else(|| format!("unknown format `{}`", s))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, result) = match cli.command {
        Command::Compute { common, format } => {
            let r = compute(common.part, common.dim, format);
            (common, r)
        }
        Command::Verify { common } => {
            let r = verify(common.part, common.dim);
            (common, r)
        }
        Command::Oracle { common, seed, tol } => {
            let r = oracle(common.part, common.dim, seed, tol);
            (common, r)
        }
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => Outcome { text: format!("error: {:#}\n", e), status: 1 },
    };
    if outcome.status == EXIT_USAGE {
        eprint!("{}", outcome.text);
        return ExitCode::from(EXIT_USAGE as u8);
    }
    match &common.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &outcome.text) {
                eprintln!("error: cannot write {}: {}", path.display(), e);
                return ExitCode::from(1);
            }
        }
        None => print!("{}", outcome.text),
    }
    ExitCode::from(outcome.status as u8)
}
