//! `exp sandwich | densities | incompr | phases`: experiment pipelines to CSV and JSON.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, ValueEnum};
use qhflock_core::experiments::{
    d_non_increasing, frequencies_non_increasing, run_density_convergence, run_energy_sandwich,
    run_incompressibility_curves, run_phase_diagram, write_outputs, ExperimentConfig, ExperimentKind,
};
use serde_json::json;

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Sandwich,
    Densities,
    Incompr,
    Phases,
}

impl Which {
    fn kind(self) -> ExperimentKind {
        match self {
            Which::Sandwich => ExperimentKind::Sandwich,
            Which::Densities => ExperimentKind::Densities,
            Which::Incompr => ExperimentKind::Incompr,
            Which::Phases => ExperimentKind::Phases,
        }
    }
}

#[derive(Parser)]
#[command(about = "Run an experiment config and write <out>/<experiment>.csv and .json")]
struct Cli {
    which: Which,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's "out", else the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status when a pipeline stops on a non-solid minimizer.
const ABORTED: i32 = 2;

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = ExperimentConfig::read_json(&cli.config)?;
    if cfg.experiment != cli.which.kind() {
        bail!("config is for {:?}, not {:?}", cfg.experiment, cli.which.kind());
    }
    let dir = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let hash = cfg.hash();
    match cli.which {
        Which::Sandwich => {
            let rep = run_energy_sandwich(&cfg)?;
            write_outputs(&dir, "sandwich", &rep.rows, &rep)?;
            if let Some(a) = &rep.abort {
                eprintln!("aborted: {}", a.reason);
                std::process::exit(ABORTED);
            }
        }
        Which::Densities => {
            let (rows, abort) = run_density_convergence(&cfg)?;
            let summary = json!({
                "config_hash": hash,
                "rows": rows,
                "abort": abort,
                "d_non_increasing": d_non_increasing(&rows),
            });
            write_outputs(&dir, "densities", &rows, &summary)?;
            if let Some(a) = &abort {
                eprintln!("aborted: {}", a.reason);
                std::process::exit(ABORTED);
            }
        }
        Which::Incompr => {
            let rows = run_incompressibility_curves(&cfg)?;
            let summary = json!({
                "config_hash": hash,
                "rows": rows,
                "non_increasing": frequencies_non_increasing(&rows),
            });
            write_outputs(&dir, "incompr", &rows, &summary)?;
        }
        Which::Phases => {
            let rows = run_phase_diagram(&cfg)?;
            write_outputs(&dir, "phases", &rows, &json!({ "config_hash": hash, "rows": rows }))?;
        }
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}
