//! `flock solve | sweep-lambda | perturb`: capacity-constrained mean-field solves.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use qhflock_cli::{emit_json, parse_values, read_json};
use qhflock_core::flocking::{
    default_half_width, lambda_sweep, phase_report, solve_perturbed, solve_with_fallback, FlockingProblem,
    SolverConfig, DEFAULT_TAU,
};
use qhflock_core::grid::Grid2D;
use qhflock_core::potentials::ModelConfig;
use serde_json::json;

#[derive(Parser)]
#[command(about = "Flocking problem: minimise ∫vμ + (λ/2)∬wμμ under 0 ≤ μ ≤ B/(2πℓ), ∫μ = 1")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Model JSON: {"B", "ell", "lambda", "v": {...}, "w": {...}}
    #[arg(long)]
    config: PathBuf,
    /// Cells per side.
    #[arg(long, default_value_t = 128)]
    grid: usize,
    /// Half width L of the [-L, L]² box (default 2·√(2ℓ/B)).
    #[arg(long)]
    half_width: Option<f64>,
    /// Absolute FW-gap tolerance (default 1e-6·(|E|+1)).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Output JSON (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn problem(&self) -> Result<(FlockingProblem, SolverConfig)> {
        let model: ModelConfig = read_json(&self.config)?;
        model.validate()?;
        let l = self.half_width.unwrap_or_else(|| default_half_width(&model.params));
        let problem = FlockingProblem::new(&model, Grid2D::new(l, self.grid)?)?;
        let cfg = SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        };
        Ok((problem, cfg))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve once and report energy, gap, phase and KKT residuals.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write the minimizer as grid CSV (plus JSON sidecar).
        #[arg(long)]
        minimizer: Option<PathBuf>,
    },
    /// One solve per λ; `start:stop:step` or a comma list.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambdas: String,
    },
    /// Relaxed-cap solves for each ε.
    Perturb {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0.01,0.02,0.04")]
        eps: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Solve { common, minimizer } => {
            let (problem, cfg) = common.problem()?;
            let rep = solve_with_fallback(&problem, &cfg)?;
            let phase = phase_report(&rep.minimizer, &problem, DEFAULT_TAU)?;
            if let Some(path) = &minimizer {
                rep.minimizer.write_csv(path)?;
            }
            emit_json(
                &json!({
                    "energy": rep.energy,
                    "gap": rep.gap,
                    "iterations": rep.iterations,
                    "certificate": rep.certificate,
                    "phase": phase.phase,
                    "gamma": phase.gamma,
                    "violations": phase.violations,
                    "saturated_area": phase.saturated_area,
                    "intermediate_area": phase.intermediate_area,
                    "allowance": phase.allowance,
                    "wall_time": rep.wall_time,
                }),
                common.out.as_deref(),
            )
        }
        Cmd::SweepLambda { common, lambdas } => {
            let (problem, cfg) = common.problem()?;
            let sweep = lambda_sweep(&problem, &parse_values(&lambdas)?, &cfg);
            emit_json(&sweep, common.out.as_deref())
        }
        Cmd::Perturb { common, eps } => {
            let (problem, cfg) = common.problem()?;
            let table = solve_perturbed(&problem, &parse_values(&eps)?, &cfg)?;
            emit_json(&table, common.out.as_deref())
        }
    }
}
