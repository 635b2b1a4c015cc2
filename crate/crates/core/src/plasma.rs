//! Metropolis sampling of the plasma Gibbs weight `exp(-N 𝓗_N)` with
//!
//! ```text
//! 𝓗_N(X) = Σ_i (Σ_j q_j log(1/|x_i - a_j|) + B|x_i|²/2) + (2ℓ/N) Σ_{k<l} log(1/|x_k - x_l|)
//! ```
//!
//! in scaled coordinates `x = z/√N`, plus density, energy and
//! incompressibility estimators and a tensor-quadrature oracle for `N ≤ 2`.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::electrostatic::QuasiHoleConfig;
use crate::error::{Error, Result};
use crate::grid::{CellMask, Grid2D, GridDensity};
use crate::potentials::{ExternalPotential, InteractionPotential, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Correlation {
    Laughlin,
    QuasiHoles,
    /// Pair exponent `ℓ → ℓ + p`.
    ExtraJastrow { p: u32 },
}

impl Default for Correlation {
    fn default() -> Self {
        Self::Laughlin
    }
}

fn default_chains() -> usize {
    3
}

fn default_thin() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasmaConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(flatten)]
    pub params: ModelParams,
    #[serde(default)]
    pub holes: QuasiHoleConfig,
    #[serde(default)]
    pub correlation: Correlation,
    pub seed: u64,
    /// Sweeps per chain, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    /// Initial proposal scale; `None` means `1/√(NB)`.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Record one sample every `thin` sweeps.
    #[serde(default = "default_thin")]
    pub thin: usize,
}

impl PlasmaConfig {
    pub fn laughlin(n: usize, params: ModelParams, seed: u64, steps: usize, burn_in: usize) -> Self {
        Self {
            n,
            params,
            holes: QuasiHoleConfig::empty(),
            correlation: Correlation::Laughlin,
            seed,
            steps,
            burn_in,
            sigma: None,
            chains: default_chains(),
            thin: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.holes.validate()?;
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if self.steps <= self.burn_in {
            return Err(Error::InvalidParameter(format!(
                "steps ({}) must exceed burn_in ({})",
                self.steps, self.burn_in
            )));
        }
        if self.chains == 0 || self.thin == 0 {
            return Err(Error::InvalidParameter("chains and thin must be positive".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("sigma must be positive, got {s}")));
            }
        }
        match self.correlation {
            Correlation::Laughlin if !self.holes.holes.is_empty() => Err(Error::InvalidParameter(
                "laughlin correlation takes no quasi-holes; use quasi_holes".into(),
            )),
            Correlation::ExtraJastrow { p } if p % 2 != 0 => {
                Err(Error::InvalidParameter(format!("extra-Jastrow exponent must be even, got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// Pair exponent after the extra-Jastrow shift.
    pub fn effective_ell(&self) -> f64 {
        match self.correlation {
            Correlation::ExtraJastrow { p } => (self.params.ell + p) as f64,
            _ => self.params.ell as f64,
        }
    }

    /// Expected bulk density `B/(2π ℓ_eff)`.
    pub fn plateau(&self) -> f64 {
        self.params.b / (2.0 * std::f64::consts::PI * self.effective_ell())
    }

    /// Radius of the unit-mass droplet `√((2ℓ_eff + Σq)/B)`.
    pub fn droplet_radius(&self) -> f64 {
        ((2.0 * self.effective_ell() + self.holes.total_charge()) / self.params.b).sqrt()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }
}

#[inline]
fn one_body(x: [f64; 2], b: f64, holes: &QuasiHoleConfig) -> f64 {
    let mut u = 0.5 * b * (x[0] * x[0] + x[1] * x[1]);
    for h in &holes.holes {
        let d2 = (x[0] - h.x).powi(2) + (x[1] - h.y).powi(2);
        if d2 == 0.0 {
            return f64::INFINITY;
        }
        u -= 0.5 * h.q * d2.ln();
    }
    u
}

/// `𝓗_N` for `points` (length `N`). Coincidences return `+∞`.
pub fn plasma_hamiltonian(points: &[[f64; 2]], config: &PlasmaConfig) -> f64 {
    let n = points.len();
    let b = config.params.b;
    let coupling = 2.0 * config.effective_ell() / n as f64;
    let mut h = 0.0;
    for (i, &x) in points.iter().enumerate() {
        h += one_body(x, b, &config.holes);
        for y in &points[i + 1..] {
            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            if d2 == 0.0 {
                return f64::INFINITY;
            }
            h -= coupling * 0.5 * d2.ln();
        }
    }
    h
}

/// Recorded samples of one or more chains, stored flat as
/// `[x₁, y₁, x₂, y₂, …]` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasmaChain {
    pub n: usize,
    pub samples: Vec<f64>,
    /// Recorded samples per chain, in chain order.
    pub chain_lengths: Vec<usize>,
    /// Post burn-in acceptance rate per chain.
    pub acceptance: Vec<f64>,
    /// Frozen proposal scale per chain.
    pub sigma: Vec<f64>,
    /// `𝓗_N` at each recorded sample.
    pub energy_trace: Vec<f64>,
    pub wall_time: f64,
}

impl PlasmaChain {
    pub fn len(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.samples.len() / (2 * self.n)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.samples[s * 2 * self.n..(s + 1) * 2 * self.n]
    }

    pub fn points(&self, s: usize) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.sample(s).chunks_exact(2).map(|c| [c[0], c[1]])
    }

    pub fn mean_acceptance(&self) -> f64 {
        if self.acceptance.is_empty() {
            f64::NAN
        } else {
            self.acceptance.iter().sum::<f64>() / self.acceptance.len() as f64
        }
    }

    const MAGIC: &'static [u8; 4] = b"LPLC";
    const VERSION: u32 = 1;

    /// Little-endian: `"LPLC"`, version `u32`, `N u32`, samples `u64`, then
    /// `samples × N × 2` `f64` positions.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(Self::MAGIC)?;
        f.write_all(&Self::VERSION.to_le_bytes())?;
        f.write_all(&(self.n as u32).to_le_bytes())?;
        f.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.samples {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..4] != Self::MAGIC {
            return Err(bad("missing LPLC header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != Self::VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let expected = count
            .checked_mul(n * 2 * 8)
            .ok_or_else(|| bad("sample count overflows".into()))?;
        if bytes.len() - 20 != expected {
            return Err(bad(format!("expected {expected} payload bytes, found {}", bytes.len() - 20)));
        }
        let samples = bytes[20..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            n,
            samples,
            chain_lengths: vec![count],
            acceptance: Vec::new(),
            sigma: Vec::new(),
            energy_trace: Vec::new(),
            wall_time: 0.0,
        })
    }
}

/// Acceptance window the burn-in adaptation aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.35;
const ADAPT_EVERY: usize = 20;

struct ChainOutput {
    samples: Vec<f64>,
    energies: Vec<f64>,
    acceptance: f64,
    sigma: f64,
}

fn run_chain(config: &PlasmaConfig, index: usize) -> Result<ChainOutput> {
    let n = config.n;
    let b = config.params.b;
    let holes = &config.holes;
    let coupling = 2.0 * config.effective_ell() / n as f64;
    let beta = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    // Start uniformly on the expected droplet.
    let r0 = config.droplet_radius();
    let mut x: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let r = r0 * rng.random::<f64>().sqrt();
            let t = std::f64::consts::TAU * rng.random::<f64>();
            [r * t.cos(), r * t.sin()]
        })
        .collect();
    let mut energy = plasma_hamiltonian(&x, config);
    let mut sigma = config.sigma.unwrap_or(1.0 / (beta * b).sqrt());

    let recorded = (config.steps - config.burn_in) / config.thin;
    let mut samples = Vec::with_capacity(recorded * 2 * n);
    let mut energies = Vec::with_capacity(recorded);
    let (mut window_acc, mut window_tot) = (0usize, 0usize);
    let (mut acc, mut tot) = (0usize, 0usize);

    for sweep in 0..config.steps {
        for i in 0..n {
            let xi = x[i];
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let y = [xi[0] + sigma * dx, xi[1] + sigma * dy];
            let mut delta = one_body(y, b, holes) - one_body(xi, b, holes);
            if delta.is_finite() {
                // (2ℓ/N) Σ_j [log(1/|y - x_j|) - log(1/|x_i - x_j|)]
                let mut s = 0.0;
                for (j, xj) in x.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let old = (xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2);
                    let new = (y[0] - xj[0]).powi(2) + (y[1] - xj[1]).powi(2);
                    if new == 0.0 {
                        s = f64::INFINITY;
                        break;
                    }
                    s += (old / new).ln();
                }
                delta += 0.5 * coupling * s;
            }
            let accept = delta.is_finite() && (delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp());
            if accept {
                x[i] = y;
                energy += delta;
            }
            if sweep < config.burn_in {
                window_tot += 1;
                window_acc += accept as usize;
            } else {
                tot += 1;
                acc += accept as usize;
            }
        }
        if sweep < config.burn_in && (sweep + 1) % ADAPT_EVERY == 0 {
            let rate = window_acc as f64 / window_tot as f64;
            sigma *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
            window_acc = 0;
            window_tot = 0;
        }
        if sweep >= config.burn_in && (sweep - config.burn_in + 1) % config.thin == 0 {
            if energies.len() % 256 == 0 {
                energy = plasma_hamiltonian(&x, config);
            }
            for p in &x {
                samples.extend_from_slice(p);
            }
            energies.push(energy);
        }
    }
    let acceptance = acc as f64 / tot.max(1) as f64;
    if acceptance < 0.01 {
        return Err(Error::Sampler(format!(
            "chain {index}: acceptance {acceptance:.4} after adaptation (sigma {sigma:.3e})"
        )));
    }
    Ok(ChainOutput {
        samples,
        energies,
        acceptance,
        sigma,
    })
}

/// Runs `config.chains` independent chains (stream `k` of the seed for
/// chain `k`) and concatenates their recorded samples in chain order.
pub fn mcmc_sample(config: &PlasmaConfig) -> Result<PlasmaChain> {
    config.validate()?;
    let start = Instant::now();
    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|k| run_chain(config, k))
        .collect::<Result<_>>()?;
    let mut chain = PlasmaChain {
        n: config.n,
        samples: Vec::new(),
        chain_lengths: Vec::new(),
        acceptance: Vec::new(),
        sigma: Vec::new(),
        energy_trace: Vec::new(),
        wall_time: 0.0,
    };
    for out in outputs {
        chain.chain_lengths.push(out.energies.len());
        chain.samples.extend(out.samples);
        chain.energy_trace.extend(out.energies);
        chain.acceptance.push(out.acceptance);
        chain.sigma.push(out.sigma);
    }
    chain.wall_time = start.elapsed().as_secs_f64();
    Ok(chain)
}

/// Histogram of all recorded positions, each weighing `1/(N·samples)`.
/// Positions outside the grid count in the normalisation, so the mass is 1
/// exactly when the grid covers every sample.
pub fn empirical_density(chain: &PlasmaChain, grid: &Grid2D) -> Result<GridDensity> {
    if chain.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, needed: 1 });
    }
    let mut counts = vec![0u64; grid.len()];
    for p in chain.samples.chunks_exact(2) {
        if let Some(k) = grid.locate([p[0], p[1]]) {
            counts[k] += 1;
        }
    }
    let total = (chain.len() * chain.n) as f64;
    let scale = 1.0 / (total * grid.cell_area());
    GridDensity::new(*grid, counts.into_iter().map(|c| c as f64 * scale).collect())
}

/// Radius about the origin containing `fraction` of all recorded positions.
pub fn mass_radius(chain: &PlasmaChain, fraction: f64) -> f64 {
    let mut r: Vec<f64> = chain.samples.chunks_exact(2).map(|p| p[0].hypot(p[1])).collect();
    if r.is_empty() {
        return 0.0;
    }
    let k = ((fraction * r.len() as f64).ceil() as usize).clamp(1, r.len()) - 1;
    let (_, v, _) = r.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

/// Mean and batch-means standard error of a per-sample statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub batches: usize,
    /// Integrated autocorrelation estimate `b·Var(batch means)/Var(x)`.
    pub tau: f64,
}

/// Sweeps per batch in the batch-means error estimate.
pub const BATCH: usize = 50;

/// Batch means over non-overlapping batches that never straddle two chains.
/// Batches of 50 when every chain holds at least 10 of them; otherwise a
/// tenth of the shortest chain.
pub fn batch_means(values: &[f64], chain_lengths: &[usize]) -> Estimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let shortest = chain_lengths.iter().copied().min().unwrap_or(n).max(1);
    let b = if shortest >= 10 * BATCH { BATCH } else { (shortest / 10).max(1) };
    let mut batch = Vec::new();
    let mut offset = 0;
    for &len in chain_lengths {
        let chain = &values[offset..offset + len];
        for c in chain.chunks_exact(b) {
            batch.push(c.iter().sum::<f64>() / b as f64);
        }
        offset += len;
    }
    let k = batch.len();
    let var_x = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    if k < 2 {
        return Estimate {
            mean,
            stderr: (var_x / n as f64).sqrt(),
            samples: n,
            batches: k,
            tau: 1.0,
        };
    }
    let bmean = batch.iter().sum::<f64>() / k as f64;
    let var_b = batch.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let tau = if var_x > 0.0 { (b as f64 * var_b / var_x).max(1.0) } else { 1.0 };
    Estimate {
        mean,
        stderr: (var_b / k as f64).sqrt(),
        samples: n,
        batches: k,
        tau,
    }
}

/// Per-sample statistic `(1/N)Σv(x_i) + (λ/N²)·(N/(N-1))·Σ_{i<j} w(x_i - x_j)`.
pub fn energy_statistic(points: &[f64], v: &ExternalPotential, w: &InteractionPotential, lambda: f64) -> f64 {
    let n = points.len() / 2;
    let p = |i: usize| [points[2 * i], points[2 * i + 1]];
    let mut one = 0.0;
    for i in 0..n {
        one += v.value(p(i));
    }
    let mut pair = 0.0;
    if n > 1 && lambda != 0.0 {
        for i in 0..n {
            let a = p(i);
            for j in i + 1..n {
                let c = p(j);
                pair += w.value([a[0] - c[0], a[1] - c[1]]);
            }
        }
        pair *= lambda / (n as f64 * (n - 1) as f64);
    }
    one / n as f64 + pair
}

/// Estimator of `N⁻¹ 𝓔_{N,λ}` over the recorded samples.
pub fn energy_estimator(
    chain: &PlasmaChain,
    v: &ExternalPotential,
    w: &InteractionPotential,
    lambda: f64,
) -> Result<Estimate> {
    if chain.len() < 30 {
        return Err(Error::InsufficientSamples {
            got: chain.len(),
            needed: 30,
        });
    }
    let stats: Vec<f64> = (0..chain.len())
        .into_par_iter()
        .map(|s| energy_statistic(chain.sample(s), v, w, lambda))
        .collect();
    Ok(batch_means(&stats, &chain.chain_lengths))
}

/// Wilson score interval at `z` standard deviations.
pub fn wilson_interval(successes: f64, n: f64, z: f64) -> [f64; 2] {
    if n <= 0.0 {
        return [0.0, 1.0];
    }
    let p = successes / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes <= 0.0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes >= n { 1.0 } else { (centre + half).min(1.0) };
    [lo, hi]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetStats {
    pub area: f64,
    /// Event threshold `(1+ε)·cap·|Ω|`.
    pub threshold: f64,
    /// Mean of `∫_Ω Emp`.
    pub mean_mass: f64,
    pub violations: usize,
    pub frequency: f64,
    /// Effective sample size `n/τ` used for the Wilson interval.
    pub effective_samples: f64,
    pub wilson: [f64; 2],
    pub bootstrap: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasureStats {
    pub eps: f64,
    pub cap: f64,
    pub samples: usize,
    pub sets: Vec<SetStats>,
}

/// Per-set frequency of `∫_Ω Emp_{X_N} > (1+ε)·cap·|Ω|` across the recorded
/// samples, with 95% Wilson intervals on the autocorrelation-corrected
/// sample size and a moving-block bootstrap interval.
pub fn incompressibility_scan(
    chain: &PlasmaChain,
    grid: &Grid2D,
    sets: &[CellMask],
    eps: f64,
    cap: f64,
) -> Result<EmpiricalMeasureStats> {
    if chain.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, needed: 1 });
    }
    for m in sets {
        if m.len() != grid.len() {
            return Err(Error::GridMismatch(format!("mask of {} cells on a {} grid", m.len(), grid.len())));
        }
    }
    let samples = chain.len();
    let cells: Vec<Vec<Option<usize>>> = (0..samples)
        .into_par_iter()
        .map(|s| chain.points(s).map(|p| grid.locate(p)).collect())
        .collect();
    let stats = sets
        .iter()
        .enumerate()
        .map(|(idx, mask)| {
            let area = mask.area(grid);
            let threshold = (1.0 + eps) * cap * area;
            let masses: Vec<f64> = cells
                .iter()
                .map(|c| c.iter().filter(|k| k.is_some_and(|k| mask.contains(k))).count() as f64 / chain.n as f64)
                .collect();
            let hits: Vec<f64> = masses.iter().map(|&m| (m > threshold) as u8 as f64).collect();
            let violations = hits.iter().filter(|&&h| h > 0.0).count();
            let est = batch_means(&hits, &chain.chain_lengths);
            let n_eff = samples as f64 / est.tau;
            let frequency = violations as f64 / samples as f64;
            SetStats {
                area,
                threshold,
                mean_mass: masses.iter().sum::<f64>() / samples as f64,
                violations,
                frequency,
                effective_samples: n_eff,
                wilson: wilson_interval(frequency * n_eff, n_eff, 1.96),
                bootstrap: block_bootstrap(&hits, BATCH, 1000, 0x5eed ^ idx as u64),
            }
        })
        .collect();
    Ok(EmpiricalMeasureStats {
        eps,
        cap,
        samples,
        sets: stats,
    })
}

/// Percentile interval (2.5%, 97.5%) of the mean under a moving-block
/// bootstrap with blocks of `block` consecutive samples.
pub fn block_bootstrap(values: &[f64], block: usize, reps: usize, seed: u64) -> [f64; 2] {
    let n = values.len();
    if n == 0 {
        return [0.0, 1.0];
    }
    let block = block.clamp(1, n);
    let starts = n - block + 1;
    let blocks = n.div_ceil(block);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..reps)
        .map(|_| {
            let mut s = 0.0;
            let mut count = 0;
            for _ in 0..blocks {
                let a = rng.random_range(0..starts);
                for v in &values[a..a + block] {
                    s += v;
                    count += 1;
                }
            }
            s / count as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (reps - 1) as f64).round() as usize).min(reps - 1)];
    [at(0.025), at(0.975)]
}

/// Tensor-quadrature oracle for `N ≤ 2`.
#[derive(Debug, Clone)]
pub struct BruteForce {
    /// One-body density `μ^(1)` with unit mass.
    pub density: GridDensity,
    /// `𝒵 = ∫ exp(-N𝓗_N)` over the grid (midpoint rule).
    pub z: f64,
    /// Unnormalised pair weights `exp(-N𝓗_N(x_k, x_m))` for `N = 2`,
    /// row-major `k·len + m`. Empty for `N = 1`.
    pub pair_weights: Vec<f64>,
}

impl BruteForce {
    /// Probability of `Emp(Ω) > threshold`.
    pub fn event_probability(&self, mask: &CellMask, threshold: f64) -> f64 {
        let g = self.density.grid();
        let a = g.cell_area();
        if self.pair_weights.is_empty() {
            let inside: f64 = mask.iter().map(|k| self.density.values()[k] * a).sum();
            return if 1.0 > threshold { inside } else { 0.0 };
        }
        let len = g.len();
        let mut p = 0.0;
        for k in 0..len {
            let ink = mask.contains(k) as u8;
            for m in 0..len {
                let count = ink + mask.contains(m) as u8;
                if count as f64 / 2.0 > threshold {
                    p += self.pair_weights[k * len + m];
                }
            }
        }
        p * a * a / self.z
    }
}

pub fn brute_force_density(config: &PlasmaConfig, grid: &Grid2D) -> Result<BruteForce> {
    config.validate()?;
    let a = grid.cell_area();
    let centers: Vec<[f64; 2]> = grid.centers().collect();
    match config.n {
        1 => {
            let w: Vec<f64> = centers
                .iter()
                .map(|&x| (-plasma_hamiltonian(&[x], config)).exp())
                .collect();
            let z = a * w.iter().sum::<f64>();
            let density = GridDensity::new(*grid, w.iter().map(|v| v / z).collect())?;
            Ok(BruteForce {
                density,
                z,
                pair_weights: Vec::new(),
            })
        }
        2 => {
            let len = centers.len();
            let pair_weights: Vec<f64> = (0..len)
                .into_par_iter()
                .flat_map_iter(|k| {
                    let centers = &centers;
                    (0..len).map(move |m| (-2.0 * plasma_hamiltonian(&[centers[k], centers[m]], config)).exp())
                })
                .collect();
            let z = a * a * pair_weights.iter().sum::<f64>();
            let marginal: Vec<f64> = (0..len)
                .map(|k| a * pair_weights[k * len..(k + 1) * len].iter().sum::<f64>() / z)
                .collect();
            Ok(BruteForce {
                density: GridDensity::new(*grid, marginal)?,
                z,
                pair_weights,
            })
        }
        n => Err(Error::InvalidParameter(format!("brute force supports N ≤ 2, got {n}"))),
    }
}
