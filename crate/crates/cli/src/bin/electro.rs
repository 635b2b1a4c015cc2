//! `electro solve | invert`: equilibrium measures with point-charge holes.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use qhflock_cli::emit_json;
use qhflock_core::electrostatic::{
    default_half_width, inverse_electrostatic, radial_extent, solve_equilibrium, InverseOptions, QuasiHoleConfig,
};
use qhflock_core::flocking::SolverConfig;
use qhflock_core::grid::{Grid2D, GridDensity};
use qhflock_core::potentials::ModelParams;
use serde_json::json;

#[derive(Parser)]
#[command(about = "Capacity-constrained electrostatics with quasi-hole charges")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Physics {
    #[arg(long = "B", default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 1)]
    ell: u32,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Output JSON (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Physics {
    fn params(&self) -> Result<ModelParams> {
        Ok(ModelParams::new(self.b, self.ell, 0.0)?)
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Equilibrium measure for the holes in a QuasiHoleConfig JSON.
    Solve {
        #[arg(long)]
        holes: PathBuf,
        #[command(flatten)]
        physics: Physics,
        #[arg(long, default_value_t = 128)]
        grid: usize,
        /// Half width of the box (default from the droplet and hole extent).
        #[arg(long)]
        half_width: Option<f64>,
        /// Write the equilibrium density as grid CSV.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Quasi-holes on a δ-lattice reproducing a solid target density.
    Invert {
        /// Target density in grid CSV format.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        delta: f64,
        /// Charge quantum 2/N_ref; omit for unrounded charges.
        #[arg(long)]
        n_ref: Option<u32>,
        #[command(flatten)]
        physics: Physics,
        /// Write the constructed holes as QuasiHoleConfig JSON.
        #[arg(long)]
        holes: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Solve {
            holes,
            physics,
            grid,
            half_width,
            density,
        } => {
            let params = physics.params()?;
            let holes = QuasiHoleConfig::read_json(&holes)?;
            let l = half_width.unwrap_or_else(|| default_half_width(&holes, &params));
            let g = Grid2D::new(l, grid)?;
            let eq = solve_equilibrium(&holes, &params, &g, &physics.solver())?;
            if let Some(p) = &density {
                eq.density.write_csv(p)?;
            }
            let extent = radial_extent(&eq.density, [0.0, 0.0], params.cap());
            emit_json(
                &json!({
                    "energy": eq.energy,
                    "gap": eq.gap,
                    "iterations": eq.iterations,
                    "phase": eq.phase,
                    "holes": eq.holes,
                    "radial_extent": extent,
                }),
                physics.out.as_deref(),
            )
        }
        Cmd::Invert {
            target,
            delta,
            n_ref,
            physics,
            holes,
        } => {
            let params = physics.params()?;
            let mu = GridDensity::read_csv(&target)?;
            let opts = InverseOptions {
                n_ref,
                solver: physics.solver(),
                ..InverseOptions::default()
            };
            let inv = inverse_electrostatic(&mu, &params, delta, &opts)?;
            if let Some(p) = &holes {
                inv.holes.write_json(p)?;
            }
            emit_json(
                &json!({
                    "holes": inv.holes,
                    "distance": inv.distance,
                    "depleted_area": inv.depleted_area,
                    "total_charge": inv.holes.total_charge(),
                    "equilibrium_phase": inv.equilibrium.phase.phase,
                }),
                physics.out.as_deref(),
            )
        }
    }
}
