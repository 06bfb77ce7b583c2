use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chdf_core::config::{load_config, RunConfig};
use chdf_core::driver;
use chdf_core::Error;

#[derive(Parser)]
#[command(name = "chdf", about = "Phase-field / surfactant / porous-flow simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the time loop and write the ledger and snapshots.
    Run(Args),
    /// Run the invariant suite at the configured size.
    Check(Args),
    /// Solve the stationary problem seeded by the initial condition.
    Steady(Args),
}

#[derive(clap::Args)]
struct Args {
    config: PathBuf,
    /// Overrides `[output] directory`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn load(args: &Args) -> Result<RunConfig, Error> {
    let mut cfg = load_config(&args.config)?;
    if let Some(dir) = &args.output_dir {
        cfg.output.directory = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Run(args) => {
            let cfg = load(args)?;
            let summary = driver::run(&cfg)?;
            let last = summary.rows.last();
            println!(
                "completed {} steps; ledger at {}",
                summary.steps,
                summary.series_path.display()
            );
            if let Some(row) = last {
                println!("t = {}  E = {:.12e}  slack = {:.3e}", row.time, row.energy_total, row.slack);
            }
            Ok(true)
        }
        Command::Check(args) => {
            let cfg = load(args)?;
            let results = driver::check(&cfg)?;
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status}  {:width$}  {}", r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::Steady(args) => {
            let cfg = load(args)?;
            let s = driver::steady(&cfg)?;
            println!("mu_phi_inf = {:.16e}", s.solution.mu_phi_inf);
            println!("mu_psi_inf = {:.16e}", s.solution.mu_psi_inf);
            println!("delta_phi = {:.6e}  delta_psi = {:.6e}", s.delta_phi, s.delta_psi);
            println!(
                "newton iterations = {}  residual = {:.3e}",
                s.solution.newton_iterations, s.solution.residual
            );
            for p in &s.snapshot_paths {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    driver::configure_threads();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
