use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fdlm_core::pipeline::Tolerances;

mod commands;

use commands::Failure;

/// Spectral Galerkin solver for a viscous solid immersed in a viscous fluid.
#[derive(Debug, Parser)]
#[command(name = "fdlm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trajectory, energy, recovery and report files.
    Run {
        config: PathBuf,
        /// Output directory; overrides the scenario's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Re-run a stored scenario and check its outputs.
    Verify {
        dir: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Terminal-state differences across Galerkin dimensions and time steps.
    Converge {
        config: PathBuf,
        /// Comma-separated Galerkin dimensions; defaults to the scenario's `m`.
        #[arg(long, value_delimiter = ',')]
        m_list: Vec<usize>,
        /// Comma-separated time steps; defaults to the scenario's `dt`.
        #[arg(long, value_delimiter = ',')]
        dt_list: Vec<f64>,
        /// Directory for the CSV tables; defaults to the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write long-format plot data from a run directory.
    Plotdata { dir: PathBuf },
}

#[derive(Debug, Args)]
struct TolArgs {
    #[arg(long)]
    energy_tol: Option<f64>,
    #[arg(long)]
    constraint_tol: Option<f64>,
    #[arg(long)]
    c_psd_tol: Option<f64>,
    #[arg(long)]
    split_tol: Option<f64>,
    #[arg(long)]
    divergence_tol: Option<f64>,
    #[arg(long)]
    pressure_mean_tol: Option<f64>,
    #[arg(long)]
    reproduction_tol: Option<f64>,
}

impl TolArgs {
    fn resolve(&self) -> Tolerances {
        let d = Tolerances::default();
        Tolerances {
            energy_balance: self.energy_tol.unwrap_or(d.energy_balance),
            constraint: self.constraint_tol.unwrap_or(d.constraint),
            c_psd: self.c_psd_tol.unwrap_or(d.c_psd),
            split: self.split_tol.unwrap_or(d.split),
            divergence_free: self.divergence_tol.unwrap_or(d.divergence_free),
            pressure_mean: self.pressure_mean_tol.unwrap_or(d.pressure_mean),
            reproduction: self.reproduction_tol.unwrap_or(d.reproduction),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Run { config, out, tol } => commands::run(config, out.as_deref(), &tol.resolve()),
        Command::Verify { dir, tol } => commands::verify(dir, &tol.resolve()),
        Command::Converge {
            config,
            m_list,
            dt_list,
            out,
        } => commands::converge(config, m_list, dt_list, out.as_deref()),
        Command::Plotdata { dir } => commands::plotdata(dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Checks(names)) => {
            eprintln!("failed checks: {}", names.join(", "));
            ExitCode::from(2)
        }
    }
}
