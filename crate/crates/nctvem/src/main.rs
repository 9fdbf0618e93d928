//! Command-line entry point: `nctvem run --config <file>` executes an
//! h-convergence study and optionally writes CSV, SVG, and Matrix Market
//! dumps. Exit code 2 flags usage or configuration mistakes, 1 any failure
//! during a valid run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nctvem::cli::{load_config, print_study, run_study, write_csv, write_svg, CliError};

#[derive(Parser)]
#[command(name = "nctvem", version, about = "Plane-wave virtual element solver for the 2D Helmholtz impedance problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a configuration file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Replace the exact solution by a wave of the discrete span; the
    /// solver must reproduce it to near machine precision.
    #[arg(long)]
    patch_test: bool,
    /// Re-express every edge basis through the spectral filter instead of
    /// only falling back on numerically singular boundary Grams.
    #[arg(long)]
    svd_filter: bool,
    /// Write each assembled system as Matrix Market files derived from
    /// this base path.
    #[arg(long)]
    dump_system: Option<PathBuf>,
    /// Write the run records as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the log-log convergence panels as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    // Flags can only turn modes on; the config file remains authoritative
    // for everything else.
    cfg.patch_test |= args.patch_test;
    cfg.svd_filter |= args.svd_filter;

    let result = run_study(&cfg, args.dump_system.as_deref())?;
    print_study(&result, &mut std::io::stdout()).map_err(CliError::from)?;
    if let Some(path) = &args.csv {
        write_csv(&result.records, path)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.svg {
        write_svg(&result, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = &cli.command;
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
