//! `plasma sample | density | scan | energy`: log-gas Monte Carlo and estimators.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use qhflock_cli::{emit_json, read_json};
use qhflock_core::grid::{CellMask, Grid2D};
use qhflock_core::plasma::{
    empirical_density, energy_estimator, incompressibility_scan, mass_radius, mcmc_sample, PlasmaChain, PlasmaConfig,
};
use qhflock_core::potentials::ModelConfig;
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
#[command(about = "Metropolis sampling of exp(-N·H_N) and estimators on the recorded chain")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the chains and write the binary chain file.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampler diagnostics JSON (stdout when absent).
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Histogram of the recorded positions as grid CSV.
    Density {
        #[arg(long)]
        chain: PathBuf,
        /// Cells per side.
        #[arg(long, default_value_t = 128)]
        grid: usize,
        /// Half width (default: smallest box holding every position, plus 5%).
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Violation frequencies of ∫_Ω Emp > (1+ε)·B|Ω|/(2πℓ) for the disks in a sets file.
    Scan {
        #[arg(long)]
        chain: PathBuf,
        /// Plasma config the chain was sampled from (for B and ℓ).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sets: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate of N⁻¹·E_{N,λ} for a model's v, w and λ.
    Energy {
        #[arg(long)]
        chain: PathBuf,
        /// Model JSON: {"B", "ell", "lambda", "v", "w"}.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
struct Disk {
    center: [f64; 2],
    radius: f64,
}

#[derive(Deserialize)]
struct SetsFile {
    half_width: f64,
    n: usize,
    disks: Vec<Disk>,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Sample { config, out, stats } => {
            let cfg = PlasmaConfig::read_json(&config)?;
            let chain = mcmc_sample(&cfg)?;
            chain.write(&out)?;
            emit_json(
                &json!({
                    "N": chain.n,
                    "samples": chain.len(),
                    "chain_lengths": chain.chain_lengths,
                    "acceptance": chain.acceptance,
                    "sigma": chain.sigma,
                    "radius_99": mass_radius(&chain, 0.99),
                    "wall_time": chain.wall_time,
                }),
                stats.as_deref(),
            )
        }
        Cmd::Density {
            chain,
            grid,
            half_width,
            out,
        } => {
            let chain = PlasmaChain::read(&chain)?;
            let l = match half_width {
                Some(l) => l,
                None => 1.05 * chain.samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9),
            };
            let d = empirical_density(&chain, &Grid2D::new(l, grid)?)?;
            d.write_csv(&out)?;
            Ok(())
        }
        Cmd::Scan {
            chain,
            config,
            sets,
            eps,
            out,
        } => {
            let chain = PlasmaChain::read(&chain)?;
            let cfg = PlasmaConfig::read_json(&config)?;
            if cfg.n != chain.n {
                bail!("chain has N = {} but the config says N = {}", chain.n, cfg.n);
            }
            let sets: SetsFile = read_json(&sets)?;
            let grid = Grid2D::new(sets.half_width, sets.n)?;
            let masks: Vec<CellMask> = sets.disks.iter().map(|d| CellMask::disk(&grid, d.center, d.radius)).collect();
            let stats = incompressibility_scan(&chain, &grid, &masks, eps, cfg.params.cap())?;
            emit_json(&stats, out.as_deref())
        }
        Cmd::Energy { chain, model, out } => {
            let chain = PlasmaChain::read(&chain)?;
            let model: ModelConfig = read_json(&model)?;
            model.validate()?;
            let est = energy_estimator(&chain, &model.v, &model.w, model.params.lambda)?;
            emit_json(&est, out.as_deref())
        }
    }
}
