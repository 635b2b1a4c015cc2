//! Declarative experiment pipelines: energy sandwich, density convergence,
//! incompressibility curves and the λ phase diagram.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::electrostatic::{d_metric, inverse_electrostatic, InverseOptions, QuasiHoleConfig};
use crate::error::{Error, Result};
use crate::flocking::{
    classify_phase, default_half_width, lambda_sweep, solve_with_fallback, FlockingProblem, Phase, SolverConfig,
    DEFAULT_TAU,
};
use crate::grid::{CellMask, Grid2D, GridDensity};
use crate::plasma::{
    batch_means, energy_estimator, energy_statistic, incompressibility_scan, mcmc_sample, Correlation, PlasmaChain,
    PlasmaConfig, BATCH,
};
use crate::potentials::{ExternalPotential, InteractionPotential, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sandwich,
    Densities,
    Incompr,
    Phases,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `None` means twice the droplet radius.
    #[serde(default)]
    pub half_width: Option<f64>,
    pub n: usize,
}

fn default_chains() -> usize {
    3
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasmaSettings {
    pub steps: usize,
    pub burn_in: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub sigma: Option<f64>,
    /// State sampled by the incompressibility experiment.
    #[serde(default)]
    pub correlation: Correlation,
    #[serde(default)]
    pub holes: QuasiHoleConfig,
}

fn default_eps() -> Vec<f64> {
    vec![0.1, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelConfig,
    pub grid: GridSpec,
    #[serde(default)]
    pub flocking: SolverConfig,
    pub plasma: PlasmaSettings,
    #[serde(default)]
    pub n_ladder: Vec<usize>,
    pub seed: u64,
    /// Coupling values for the phase diagram and for locating `λ₀` before a sandwich run.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Interaction families for the phase diagram; empty means `model.w` only.
    #[serde(default)]
    pub w_family: Vec<InteractionPotential>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Radii of the centred disks probed by the incompressibility curves,
    /// in units of the droplet radius.
    #[serde(default)]
    pub disk_radii: Vec<f64>,
    /// Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.grid.n == 0 {
            return Err(Error::InvalidGrid("grid.n must be positive".into()));
        }
        if let Some(l) = self.grid.half_width {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidGrid(format!("half_width must be positive, got {l}")));
            }
        }
        for w in &self.w_family {
            w.validate()?;
        }
        if self.eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidParameter("eps values must be >= 0".into()));
        }
        if self.disk_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidParameter("disk radii must be positive".into()));
        }
        let needs_ladder = matches!(
            self.experiment,
            ExperimentKind::Sandwich | ExperimentKind::Densities | ExperimentKind::Incompr
        );
        if needs_ladder && self.n_ladder.is_empty() {
            return Err(Error::InvalidParameter("n_ladder must not be empty".into()));
        }
        if self.n_ladder.contains(&0) {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if self.experiment == ExperimentKind::Phases && self.lambdas.is_empty() {
            return Err(Error::InvalidParameter("phase diagram needs lambdas".into()));
        }
        self.plasma_config(self.n_ladder.first().copied().unwrap_or(1), QuasiHoleConfig::empty(), Correlation::Laughlin)
            .validate()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<Grid2D> {
        let l = self.grid.half_width.unwrap_or_else(|| default_half_width(&self.model.params));
        Grid2D::new(l, self.grid.n)
    }

    pub fn problem(&self) -> Result<FlockingProblem> {
        FlockingProblem::new(&self.model, self.grid()?)
    }

    /// Sampler settings for `N` particles; seeds differ per `N`.
    pub fn plasma_config(&self, n: usize, holes: QuasiHoleConfig, correlation: Correlation) -> PlasmaConfig {
        PlasmaConfig {
            n,
            params: self.model.params,
            holes,
            correlation,
            seed: self.seed.wrapping_add((n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            steps: self.plasma.steps,
            burn_in: self.plasma.burn_in,
            sigma: self.plasma.sigma,
            chains: self.plasma.chains,
            thin: self.plasma.thin,
        }
    }
}

/// Rows that carry the hash of the config they came from.
pub trait Hashed {
    fn config_hash(&self) -> &str;
}

/// Concatenates tables, refusing rows from a different config.
pub fn aggregate<R: Hashed + Clone>(tables: &[Vec<R>]) -> Result<Vec<R>> {
    let mut out: Vec<R> = Vec::new();
    for row in tables.iter().flatten() {
        if let Some(first) = out.first() {
            if first.config_hash() != row.config_hash() {
                return Err(Error::HashMismatch {
                    expected: first.config_hash().to_string(),
                    found: row.config_hash().to_string(),
                });
            }
        }
        out.push(row.clone());
    }
    Ok(out)
}

macro_rules! hashed {
    ($($t:ty),*) => {$(
        impl Hashed for $t {
            fn config_hash(&self) -> &str {
                &self.config_hash
            }
        }
    )*};
}

/// Stops a pipeline that needs a solid minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub lambda: f64,
    pub phase: Option<Phase>,
    pub lambda0_estimate: Option<f64>,
    pub reason: String,
}

/// Solves the flocking problem, checks `|λ| ≤ λ₀` when `cfg.lambdas` is
/// given, and requires a solid minimizer.
fn solid_minimizer(cfg: &ExperimentConfig) -> Result<std::result::Result<(GridDensity, f64), AbortRecord>> {
    let problem = cfg.problem()?;
    let lambda = cfg.model.params.lambda;
    let mut lambda0 = None;
    if !cfg.lambdas.is_empty() {
        lambda0 = lambda_sweep(&problem, &cfg.lambdas, &cfg.flocking).lambda0_estimate;
        if lambda0.is_none_or(|l0| lambda.abs() > l0) {
            return Ok(Err(AbortRecord {
                lambda,
                phase: None,
                lambda0_estimate: lambda0,
                reason: format!("|λ| = {} exceeds the solid range found by the sweep", lambda.abs()),
            }));
        }
    }
    let rep = match solve_with_fallback(&problem, &cfg.flocking) {
        Err(e @ Error::NotConverged { .. }) => {
            return Ok(Err(AbortRecord {
                lambda,
                phase: None,
                lambda0_estimate: lambda0,
                reason: e.to_string(),
            }))
        }
        other => other?,
    };
    let phase = classify_phase(&rep.minimizer, problem.cap(), DEFAULT_TAU);
    if phase.phase != Phase::Solid {
        return Ok(Err(AbortRecord {
            lambda,
            phase: Some(phase.phase),
            lambda0_estimate: lambda0,
            reason: format!(
                "minimizer is {} (intermediate area {:.4e} > allowance {:.4e})",
                phase.phase, phase.intermediate_area, phase.allowance
            ),
        }));
    }
    Ok(Ok((rep.minimizer, rep.energy)))
}

/// `δ = N^{-1/4}·√(2ℓ/B)`.
pub fn sandwich_delta(n: usize, cfg: &ExperimentConfig) -> f64 {
    (n as f64).powf(-0.25) * cfg.model.params.droplet_radius()
}

/// Samples the quasi-hole state built from `mu_sol` at `N` particles.
fn sample_constructed_state(
    cfg: &ExperimentConfig,
    mu_sol: &GridDensity,
    n: usize,
) -> Result<(PlasmaChain, QuasiHoleConfig, f64)> {
    let delta = sandwich_delta(n, cfg);
    let opts = InverseOptions {
        n_ref: Some(n as u32),
        solver: cfg.flocking,
        ..InverseOptions::default()
    };
    let inv = inverse_electrostatic(mu_sol, &cfg.model.params, delta, &opts)?;
    let holes = inv.holes;
    let correlation = if holes.holes.is_empty() {
        Correlation::Laughlin
    } else {
        Correlation::QuasiHoles
    };
    let chain = mcmc_sample(&cfg.plasma_config(n, holes.clone(), correlation))?;
    Ok((chain, holes, delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub delta: f64,
    pub holes: usize,
    pub hole_charge: f64,
    pub e_flo: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub acceptance: f64,
    pub samples: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    pub abort: Option<AbortRecord>,
    pub config_hash: String,
}

impl SandwichReport {
    /// `|ratio - 1|` never grows by more than `k` combined standard errors
    /// from one `N` to the next.
    pub fn approaches_one(&self, k: f64) -> bool {
        self.rows.windows(2).all(|p| {
            let se = p[0].ratio_stderr.hypot(p[1].ratio_stderr);
            (p[1].ratio - 1.0).abs() <= (p[0].ratio - 1.0).abs() + k * se
        })
    }
}

/// Flocking solve, solid check, inverse construction at `δ(N)`, sampling of
/// the quasi-hole state and energy estimation, for each `N` in the ladder.
pub fn run_energy_sandwich(cfg: &ExperimentConfig) -> Result<SandwichReport> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let (mu_sol, e_flo) = match solid_minimizer(cfg)? {
        Ok(v) => v,
        Err(abort) => {
            return Ok(SandwichReport {
                rows: Vec::new(),
                abort: Some(abort),
                config_hash,
            })
        }
    };
    let mut ladder = cfg.n_ladder.clone();
    ladder.sort_unstable();
    ladder.dedup();
    let rows = ladder
        .par_iter()
        .map(|&n| {
            let (chain, holes, delta) = sample_constructed_state(cfg, &mu_sol, n)?;
            let est = energy_estimator(&chain, &cfg.model.v, &cfg.model.w, cfg.model.params.lambda)?;
            Ok(SandwichRow {
                n,
                delta,
                holes: holes.holes.len(),
                hole_charge: holes.total_charge(),
                e_flo,
                mc_mean: est.mean,
                mc_stderr: est.stderr,
                ratio: est.mean / e_flo,
                ratio_stderr: est.stderr / e_flo.abs(),
                acceptance: chain.mean_acceptance(),
                samples: chain.len(),
                config_hash: config_hash.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SandwichReport {
        rows,
        abort: None,
        config_hash,
    })
}

/// Smooth test functions paired against the densities, scaled to the
/// droplet radius `R`.
pub fn test_functions(r: f64) -> [(&'static str, Box<dyn Fn([f64; 2]) -> f64 + Send + Sync>); 4] {
    [
        ("one", Box::new(|_| 1.0)),
        ("gauss", Box::new(move |x: [f64; 2]| (-(x[0] * x[0] + x[1] * x[1]) / (r * r)).exp())),
        (
            "quadratic_gauss",
            Box::new(move |x: [f64; 2]| {
                let s = (x[0] * x[0] + x[1] * x[1]) / (r * r);
                s * (-0.5 * s).exp()
            }),
        ),
        (
            "cosine",
            Box::new(move |x: [f64; 2]| (x[0] / r).cos() * (0.5 * x[1] / r).cos() * (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * r * r)).exp()),
        ),
    ]
}

/// Width of the Gaussian pair test function `χ₂(x, y) = exp(-|x - y|²/R²)`.
fn pair_test_function(r: f64) -> InteractionPotential {
    InteractionPotential::gaussian(1.0, r / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub d_metric: f64,
    pub d_lo: f64,
    pub d_hi: f64,
    /// Sampled mass falling outside the grid.
    pub mass_outside: f64,
    pub pair_one: f64,
    pub pair_gauss: f64,
    pub pair_gauss_stderr: f64,
    pub pair_quadratic_gauss: f64,
    pub pair_quadratic_gauss_stderr: f64,
    pub pair_cosine: f64,
    pub pair_cosine_stderr: f64,
    /// Two-body pairing `∬χ₂ μ^(2) - ∬χ₂ μ⊗μ`.
    pub pair2: f64,
    pub pair2_stderr: f64,
    pub samples: usize,
    pub config_hash: String,
}

impl DensityRow {
    /// Differences for the four one-body test functions, in `test_functions` order.
    pub fn pairings(&self) -> [f64; 4] {
        [self.pair_one, self.pair_gauss, self.pair_quadratic_gauss, self.pair_cosine]
    }
}

/// `D(a, b)` non-increasing from row to row within the bootstrap intervals.
pub fn d_non_increasing(rows: &[DensityRow]) -> bool {
    rows.windows(2).all(|p| p[1].d_lo <= p[0].d_hi)
}

/// Histogram of each block of `BATCH` consecutive samples (within a chain).
fn block_histograms(chain: &PlasmaChain, grid: &Grid2D) -> Vec<Vec<f64>> {
    let mut starts = Vec::new();
    let mut offset = 0;
    for &len in &chain.chain_lengths {
        let b = BATCH.min(len.max(1));
        let mut s = 0;
        while s + b <= len {
            starts.push((offset + s, b));
            s += b;
        }
        offset += len;
    }
    starts
        .par_iter()
        .map(|&(start, len)| {
            let mut h = vec![0.0; grid.len()];
            for s in start..start + len {
                for p in chain.points(s) {
                    if let Some(k) = grid.locate(p) {
                        h[k] += 1.0;
                    }
                }
            }
            h
        })
        .collect()
}

fn unit_mass(grid: &Grid2D, counts: &[f64]) -> Result<GridDensity> {
    let total: f64 = counts.iter().sum();
    let scale = 1.0 / (total * grid.cell_area());
    GridDensity::new(*grid, counts.iter().map(|c| c * scale).collect())
}

/// `D` between the in-grid empirical density (rescaled to unit mass) and
/// `mu`, with a 95% block-bootstrap interval.
pub fn d_metric_with_interval(chain: &PlasmaChain, mu: &GridDensity, reps: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let grid = *mu.grid();
    let blocks = block_histograms(chain, &grid);
    if blocks.is_empty() {
        return Err(Error::InsufficientSamples {
            got: chain.len(),
            needed: BATCH,
        });
    }
    let mut all = vec![0.0; grid.len()];
    for b in &blocks {
        for (a, v) in all.iter_mut().zip(b) {
            *a += v;
        }
    }
    let d = d_metric(&unit_mass(&grid, &all)?, mu)?;
    let mut boot: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut acc = vec![0.0; grid.len()];
            for _ in 0..blocks.len() {
                let b = &blocks[rng.random_range(0..blocks.len())];
                for (a, v) in acc.iter_mut().zip(b) {
                    *a += v;
                }
            }
            d_metric(&unit_mass(&grid, &acc)?, mu)
        })
        .collect::<Result<_>>()?;
    boot.sort_by(f64::total_cmp);
    let at = |q: f64| boot[((q * (reps - 1) as f64).round() as usize).min(reps - 1)];
    Ok((d, at(0.025).min(d), at(0.975).max(d)))
}

/// Pairing differences `E[(1/N)Σχ(x_i)] - ∫χ μ` with batch-means errors.
fn one_body_pairings(chain: &PlasmaChain, mu: &GridDensity, r: f64) -> Vec<(f64, f64)> {
    let grid = mu.grid();
    let a = grid.cell_area();
    test_functions(r)
        .iter()
        .map(|(_, chi)| {
            let reference: f64 = grid.centers().zip(mu.values()).map(|(x, m)| chi(x) * m).sum::<f64>() * a;
            let stats: Vec<f64> = (0..chain.len())
                .into_par_iter()
                .map(|s| chain.points(s).map(chi).sum::<f64>() / chain.n as f64)
                .collect();
            let est = batch_means(&stats, &chain.chain_lengths);
            (est.mean - reference, est.stderr)
        })
        .collect()
}

/// Density-convergence table: `D` and smooth pairings between the sampled
/// constructed state and the flocking minimizer, per `N`.
pub fn run_density_convergence(cfg: &ExperimentConfig) -> Result<(Vec<DensityRow>, Option<AbortRecord>)> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let mu_sol = match solid_minimizer(cfg)? {
        Ok((mu, _)) => mu,
        Err(abort) => return Ok((Vec::new(), Some(abort))),
    };
    let r = cfg.model.params.droplet_radius();
    let chi2 = pair_test_function(r);
    let pair2_reference = chi2.convolver(*mu_sol.grid()).quadratic_form(mu_sol.values());
    let flat = ExternalPotential::Quadratic {
        strength: 0.0,
        center: [0.0, 0.0],
    };
    let mut ladder = cfg.n_ladder.clone();
    ladder.sort_unstable();
    ladder.dedup();
    let rows = ladder
        .par_iter()
        .map(|&n| {
            let (chain, _, _) = sample_constructed_state(cfg, &mu_sol, n)?;
            let (d, d_lo, d_hi) = d_metric_with_interval(&chain, &mu_sol, 200, cfg.seed ^ n as u64)?;
            let inside = chain
                .samples
                .chunks_exact(2)
                .filter(|p| mu_sol.grid().locate([p[0], p[1]]).is_some())
                .count();
            let p = one_body_pairings(&chain, &mu_sol, r);
            // λ = 2 turns the pair average into a mean over ordered pairs.
            let (pair2, pair2_stderr) = if n > 1 {
                let stats: Vec<f64> = (0..chain.len())
                    .into_par_iter()
                    .map(|s| energy_statistic(chain.sample(s), &flat, &chi2, 2.0))
                    .collect();
                let est = batch_means(&stats, &chain.chain_lengths);
                (est.mean - pair2_reference, est.stderr)
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(DensityRow {
                n,
                d_metric: d,
                d_lo,
                d_hi,
                mass_outside: 1.0 - inside as f64 / (chain.len() * n) as f64,
                pair_one: p[0].0,
                pair_gauss: p[1].0,
                pair_gauss_stderr: p[1].1,
                pair_quadratic_gauss: p[2].0,
                pair_quadratic_gauss_stderr: p[2].1,
                pair_cosine: p[3].0,
                pair_cosine_stderr: p[3].1,
                pair2,
                pair2_stderr,
                samples: chain.len(),
                config_hash: config_hash.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomprRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    /// Disk radius in units of the droplet radius.
    pub radius: f64,
    pub area: f64,
    pub threshold: f64,
    pub mean_mass: f64,
    pub violations: usize,
    pub frequency: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub bootstrap_lo: f64,
    pub bootstrap_hi: f64,
    /// Least-squares slope of `ln frequency` against `ln N` over the rows of
    /// this `(ε, radius)` pair with a positive frequency.
    pub log_slope: Option<f64>,
    pub samples: usize,
    pub config_hash: String,
}

impl Hashed for IncomprRow {
    fn config_hash(&self) -> &str {
        &self.config_hash
    }
}

/// Violation frequency non-increasing in `N` within the Wilson intervals,
/// for rows sharing `(eps, radius)`.
pub fn frequencies_non_increasing(rows: &[IncomprRow]) -> bool {
    let mut ok = true;
    for a in rows {
        for b in rows {
            if a.eps == b.eps && a.radius == b.radius && b.n > a.n {
                ok &= b.wilson_lo <= a.wilson_hi;
            }
        }
    }
    ok
}

/// Violation frequencies of the centred disks for each `N` and `ε`.
pub fn run_incompressibility_curves(cfg: &ExperimentConfig) -> Result<Vec<IncomprRow>> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let grid = cfg.grid()?;
    let r0 = cfg.model.params.droplet_radius();
    let radii = if cfg.disk_radii.is_empty() {
        vec![0.5]
    } else {
        cfg.disk_radii.clone()
    };
    let masks: Vec<CellMask> = radii.iter().map(|&r| CellMask::disk(&grid, [0.0, 0.0], r * r0)).collect();
    let cap = cfg.model.params.cap();
    let mut ladder = cfg.n_ladder.clone();
    ladder.sort_unstable();
    ladder.dedup();
    let per_n = ladder
        .par_iter()
        .map(|&n| {
            let pc = cfg.plasma_config(n, cfg.plasma.holes.clone(), cfg.plasma.correlation);
            let chain = mcmc_sample(&pc)?;
            let mut rows = Vec::new();
            for &eps in &cfg.eps {
                let stats = incompressibility_scan(&chain, &grid, &masks, eps, cap)?;
                for (s, &radius) in stats.sets.iter().zip(&radii) {
                    rows.push(IncomprRow {
                        n,
                        eps,
                        radius,
                        area: s.area,
                        threshold: s.threshold,
                        mean_mass: s.mean_mass,
                        violations: s.violations,
                        frequency: s.frequency,
                        wilson_lo: s.wilson[0],
                        wilson_hi: s.wilson[1],
                        bootstrap_lo: s.bootstrap[0],
                        bootstrap_hi: s.bootstrap[1],
                        log_slope: None,
                        samples: stats.samples,
                        config_hash: config_hash.clone(),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<IncomprRow> = per_n.into_iter().flatten().collect();
    let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.radius)).collect();
    for (eps, radius) in keys {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.eps == eps && r.radius == radius && r.frequency > 0.0)
            .map(|r| ((r.n as f64).ln(), r.frequency.ln()))
            .collect();
        let slope = least_squares_slope(&pts);
        for r in rows.iter_mut().filter(|r| r.eps == eps && r.radius == radius) {
            r.log_slope = slope;
        }
    }
    Ok(rows)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub family: usize,
    /// JSON of the interaction.
    pub w: String,
    pub lambda: f64,
    pub energy: Option<f64>,
    pub gap: Option<f64>,
    pub phase: Option<Phase>,
    pub intermediate_area: Option<f64>,
    pub saturated_area: Option<f64>,
    pub lambda0_estimate: Option<f64>,
    pub error: Option<String>,
    pub config_hash: String,
}

/// `lambda_sweep` for every interaction family.
pub fn run_phase_diagram(cfg: &ExperimentConfig) -> Result<Vec<PhaseRow>> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let families = if cfg.w_family.is_empty() {
        vec![cfg.model.w.clone()]
    } else {
        cfg.w_family.clone()
    };
    let base = cfg.problem()?;
    let mut rows = Vec::new();
    for (family, w) in families.iter().enumerate() {
        let problem = FlockingProblem { w: w.clone(), ..base.clone() };
        let sweep = lambda_sweep(&problem, &cfg.lambdas, &cfg.flocking);
        let label = serde_json::to_string(w)?;
        rows.extend(sweep.rows.into_iter().map(|r| PhaseRow {
            family,
            w: label.clone(),
            lambda: r.lambda,
            energy: r.energy,
            gap: r.gap,
            phase: r.phase,
            intermediate_area: r.intermediate_area,
            saturated_area: r.saturated_area,
            lambda0_estimate: sweep.lambda0_estimate,
            error: r.error,
            config_hash: config_hash.clone(),
        }));
    }
    Ok(rows)
}

hashed!(SandwichRow, DensityRow, PhaseRow);

/// Writes `rows` to `<dir>/<stem>.csv` and `summary` to `<dir>/<stem>.json`.
pub fn write_outputs<R: Serialize, S: Serialize>(dir: &Path, stem: &str, rows: &[R], summary: &S) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plasma::brute_force_density;
    use crate::potentials::ModelParams;

    fn base(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            model: ModelConfig {
                params: ModelParams::new(1.0, 1, 0.0).unwrap(),
                v: ExternalPotential::quadratic(),
                w: InteractionPotential::gaussian(1.0, 0.5),
            },
            grid: GridSpec { half_width: None, n: 48 },
            flocking: SolverConfig::default(),
            plasma: PlasmaSettings {
                steps: 1200,
                burn_in: 200,
                chains: 3,
                thin: 1,
                sigma: None,
                correlation: Correlation::Laughlin,
                holes: QuasiHoleConfig::empty(),
            },
            n_ladder: vec![10, 20],
            seed: 3,
            lambdas: Vec::new(),
            w_family: Vec::new(),
            eps: default_eps(),
            disk_radii: Vec::new(),
            out: None,
        }
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_content() {
        let a = base(ExperimentKind::Sandwich);
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn config_round_trips_through_json() {
        let json = r#"{
            "experiment": "incompr",
            "model": {"B": 1.0, "ell": 1, "lambda": 0.0,
                      "v": {"family": "quadratic"}, "w": {"family": "gaussian", "amplitude": 1.0, "width": 0.5}},
            "grid": {"n": 32},
            "plasma": {"steps": 100, "burn_in": 10},
            "n_ladder": [5],
            "seed": 1
        }"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        assert_eq!(c.eps, vec![0.1, 0.2]);
        assert_eq!(c.plasma.chains, 3);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn aggregation_rejects_foreign_rows() {
        let cfg = base(ExperimentKind::Phases);
        let mut cfg = cfg;
        cfg.lambdas = vec![0.0, 0.01];
        let a = run_phase_diagram(&cfg).unwrap();
        assert_eq!(aggregate(&[a.clone(), a.clone()]).unwrap().len(), 4);
        cfg.seed += 1;
        let b = run_phase_diagram(&cfg).unwrap();
        assert!(matches!(aggregate(&[a, b]), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn sandwich_zero_coupling_matches_scaling_identity() {
        // With λ = 0 and v = |x|², the constructed state is Laughlin and
        // E[(1/N)Σ|x|²] = ℓ/B + (2 - ℓ)/(NB) = 1 + 1/N.
        let cfg = base(ExperimentKind::Sandwich);
        let rep = run_energy_sandwich(&cfg).unwrap();
        assert!(rep.abort.is_none());
        for row in &rep.rows {
            assert_eq!(row.holes, 0);
            let exact = 1.0 + 1.0 / row.n as f64;
            assert!((row.e_flo - 1.0).abs() < 0.03, "{row:?}");
            assert!((row.mc_mean - exact).abs() <= 3.0 * row.mc_stderr, "{row:?}");
        }
    }

    #[test]
    fn sandwich_aborts_beyond_the_solid_range() {
        let mut cfg = base(ExperimentKind::Sandwich);
        // Narrow strong repulsion: the minimizer is liquid.
        cfg.model.w = InteractionPotential::gaussian(1.0, 0.2);
        cfg.model.params.lambda = 200.0;
        cfg.lambdas = vec![0.0, 0.05, 200.0];
        let rep = run_energy_sandwich(&cfg).unwrap();
        let abort = rep.abort.expect("abort record");
        assert!(rep.rows.is_empty());
        assert!(abort.lambda0_estimate.is_some_and(|l| l < 200.0), "{abort:?}");
        // Without a sweep the phase check alone aborts.
        cfg.lambdas.clear();
        let rep = run_energy_sandwich(&cfg).unwrap();
        assert!(rep.abort.is_some_and(|a| a.phase.is_some_and(|p| p != Phase::Solid)));
    }

    #[test]
    fn density_table_constant_pairing_vanishes() {
        let cfg = base(ExperimentKind::Densities);
        let (rows, abort) = run_density_convergence(&cfg).unwrap();
        assert!(abort.is_none());
        for r in &rows {
            assert!(r.pair_one.abs() < 1e-10, "{r:?}");
            assert!(r.d_lo <= r.d_metric && r.d_metric <= r.d_hi);
            assert!(r.pairings().iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn two_particle_pairings_match_quadrature() {
        let mut cfg = base(ExperimentKind::Densities);
        cfg.plasma.steps = 20_000;
        cfg.plasma.burn_in = 1000;
        let grid = Grid2D::new(4.0, 96).unwrap();
        let pc = cfg.plasma_config(2, QuasiHoleConfig::empty(), Correlation::Laughlin);
        let bf = brute_force_density(&pc, &grid).unwrap();
        let chain = mcmc_sample(&pc).unwrap();
        for (i, &(diff, se)) in one_body_pairings(&chain, &bf.density, 1.0).iter().enumerate() {
            assert!(diff.abs() <= 3.0 * se + 1e-3, "test function {i}: {diff} ± {se}");
        }
    }

    #[test]
    fn incompressibility_rows_cover_the_ladder() {
        let mut cfg = base(ExperimentKind::Incompr);
        cfg.disk_radii = vec![0.4, 2.0];
        let rows = run_incompressibility_curves(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        for r in &rows {
            assert!(r.wilson_lo <= r.frequency && r.frequency <= r.wilson_hi);
            if r.radius == 2.0 {
                // A disk of twice the droplet radius: (1+ε)·cap·|Ω| > 1.
                assert_eq!(r.violations, 0);
            }
        }
    }

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = [10.0f64, 20.0, 40.0].iter().map(|n| (n.ln(), (3.0 * n.powf(-1.5)).ln())).collect();
        assert!((least_squares_slope(&pts).unwrap() + 1.5).abs() < 1e-12);
        assert_eq!(least_squares_slope(&pts[..1]), None);
    }

    #[test]
    fn outputs_are_written() {
        let mut cfg = base(ExperimentKind::Phases);
        cfg.lambdas = vec![0.0];
        let rows = run_phase_diagram(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), "phases", &rows, &rows).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("phases.csv")).unwrap();
        assert!(csv.starts_with("family,w,lambda,energy"));
        assert!(dir.path().join("phases.json").exists());
    }
}
