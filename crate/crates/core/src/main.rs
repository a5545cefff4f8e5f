use clap::{Parser, Subcommand};
use collapse_lab::cli::{cmd_cc, cmd_rates, cmd_segment, cmd_simulate, cmd_spin, CommonFlags};
use collapse_lab::scenario::Precision;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "collapse-lab",
    about = "Planar n-body collision laboratory: simulate collapses, verify \
             collision-rate laws, enumerate central configurations, check \
             isolating segments and spin convergence."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Working precision: double or dd (double-double).
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Seed for every randomized component (deterministic outputs).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a scenario to collision; write trajectory CSV + summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verify collision-rate and perturbation-decay laws.
    Rates {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Enumerate central configurations for a mass vector.
    Cc {
        /// Comma-separated masses, e.g. 1,1,1
        #[arg(long)]
        masses: String,
        #[arg(long, default_value_t = 300)]
        multistart: usize,
    },
    /// Verify an isolating-segment case.
    Segment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Spin-integral convergence table.
    Spin {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn parse_precision(s: &Option<String>) -> Result<Option<Precision>, String> {
    match s.as_deref() {
        None => Ok(None),
        Some("double") => Ok(Some(Precision::Double)),
        Some("dd") => Ok(Some(Precision::Dd)),
        Some(other) => Err(format!("unknown precision `{other}` (double or dd)")),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let precision = parse_precision(&cli.precision)?;
    let flags = CommonFlags {
        out_dir: cli.out.clone(),
        precision,
        seed: cli.seed,
    };
    match &cli.cmd {
        Cmd::Simulate { config } => {
            let summary = cmd_simulate(config, &flags).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?
            );
        }
        Cmd::Rates {
            config,
            traj,
            summary,
        } => {
            cmd_rates(
                config.as_deref(),
                traj.as_deref(),
                summary.as_deref(),
                &flags,
            )
            .map_err(|e| e.to_string())?;
        }
        Cmd::Cc { masses, multistart } => {
            let parsed: Result<Vec<f64>, _> =
                masses.split(',').map(|m| m.trim().parse::<f64>()).collect();
            let parsed = parsed.map_err(|e| format!("bad --masses: {e}"))?;
            cmd_cc(&parsed, *multistart, &flags).map_err(|e| e.to_string())?;
        }
        Cmd::Segment { config } => {
            cmd_segment(config, &flags).map_err(|e| e.to_string())?;
        }
        Cmd::Spin {
            config,
            traj,
            summary,
        } => {
            cmd_spin(
                config.as_deref(),
                traj.as_deref(),
                summary.as_deref(),
                &flags,
            )
            .map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(reason) => {
            // machine-readable failure object on stdout, nonzero exit
            println!(
                "{}",
                serde_json::json!({ "status": "error", "reason": reason })
            );
            eprintln!("error: {reason}");
            ExitCode::FAILURE
        }
    }
}
