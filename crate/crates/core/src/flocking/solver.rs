//! Conditional-gradient (Frank–Wolfe) engine for quadratic energies over
//! `{0 ≤ μ ≤ cap, ∫μ = mass}`, plus an accelerated projected-gradient solver
//! used as an independent cross-check.
//!
//! Energy: `E(μ) = h² Σ c_k μ_k + (κ/2) h⁴ μᵀ K μ`, potential
//! `Φ = c + κ h² K μ`. Both the flocking problem (`κ = λ`, `K = w`) and the
//! electrostatic problem (`κ = 2ℓ`, `K = -log`) have this form.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::lmo::{away_vertex, bathtub_values, check_feasible, project_capped};
use crate::error::{Error, Result};
use crate::grid::{dot, Grid2D, GridConvolver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Absolute FW-gap tolerance; `None` means `1e-6·(|E| + 1)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Enable in-face away steps (linear convergence on polytopes).
    pub away_steps: bool,
    /// Candidates per side for the pairwise-exchange refinement of
    /// non-convex problems; 0 disables it.
    pub exchange: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 5000,
            away_steps: true,
            exchange: 8,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol: Some(tol),
            ..Self::default()
        }
    }

    fn tolerance(&self, energy: f64) -> f64 {
        self.tol.unwrap_or(1e-6 * (energy.abs() + 1.0))
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    grid: Grid2D,
    linear: Vec<f64>,
    coupling: f64,
    kernel: GridConvolver,
}

impl QuadraticObjective {
    pub fn new(grid: Grid2D, linear: Vec<f64>, coupling: f64, kernel: GridConvolver) -> Self {
        assert_eq!(linear.len(), grid.len());
        Self {
            grid,
            linear,
            coupling,
            kernel,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn kernel(&self) -> &GridConvolver {
        &self.kernel
    }

    /// `K μ` (zero when the coupling vanishes).
    pub fn apply_kernel(&self, mu: &[f64]) -> Vec<f64> {
        if self.coupling == 0.0 {
            vec![0.0; mu.len()]
        } else {
            self.kernel.apply(mu)
        }
    }

    pub fn energy_with(&self, mu: &[f64], kmu: &[f64]) -> f64 {
        let a = self.grid.cell_area();
        a * dot(&self.linear, mu) + 0.5 * self.coupling * a * a * dot(mu, kmu)
    }

    pub fn energy(&self, mu: &[f64]) -> f64 {
        self.energy_with(mu, &self.apply_kernel(mu))
    }

    pub fn potential_with(&self, kmu: &[f64]) -> Vec<f64> {
        let s = self.coupling * self.grid.cell_area();
        self.linear.iter().zip(kmu).map(|(c, k)| c + s * k).collect()
    }

    pub fn potential(&self, mu: &[f64]) -> Vec<f64> {
        self.potential_with(&self.apply_kernel(mu))
    }

    /// FW gap `h²⟨Φ(μ), μ - s⟩` with `s` the bathtub vertex for `Φ(μ)`.
    pub fn fw_gap(&self, mu: &[f64], cap: f64, mass: f64) -> Result<f64> {
        let phi = self.potential(mu);
        let s = bathtub_values(&phi, cap, self.grid.cell_area(), mass)?;
        Ok(self.grid.cell_area() * phi.iter().zip(mu.iter().zip(&s)).map(|(p, (m, v))| p * (m - v)).sum::<f64>())
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub mu: Vec<f64>,
    pub energy: f64,
    pub gap: f64,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
    pub energy_trace: Vec<f64>,
    pub wall_time: f64,
}

impl CgOutcome {
    pub(crate) fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                gap: self.gap,
                tol: self.tol,
            })
        }
    }
}

/// Frank–Wolfe with exact line search, starting from the bathtub vertex of
/// the linear part. With `away_steps`, an in-face away direction is taken
/// whenever its slope beats the FW direction.
pub fn conditional_gradient(
    obj: &QuadraticObjective,
    cap: f64,
    mass: f64,
    cfg: &SolverConfig,
) -> Result<CgOutcome> {
    let mu = bathtub_values(&obj.linear, cap, obj.grid.cell_area(), mass)?;
    conditional_gradient_from(obj, cap, mass, cfg, mu)
}

/// Frank–Wolfe warm-started from a feasible `mu`.
pub fn conditional_gradient_from(
    obj: &QuadraticObjective,
    cap: f64,
    mass: f64,
    cfg: &SolverConfig,
    mut mu: Vec<f64>,
) -> Result<CgOutcome> {
    let start = Instant::now();
    let area = obj.grid.cell_area();
    let n = obj.grid.len();
    if mu.len() != n {
        return Err(Error::GridMismatch(format!("start has {} cells, grid has {n}", mu.len())));
    }
    let mut kmu = obj.apply_kernel(&mu);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let (mut energy, mut gap, mut tol);
    loop {
        let phi = obj.potential_with(&kmu);
        energy = obj.energy_with(&mu, &kmu);
        trace.push(energy);
        let s = bathtub_values(&phi, cap, area, mass)?;
        gap = area * (dot(&phi, &mu) - dot(&phi, &s));
        tol = cfg.tolerance(energy);
        if gap <= tol || iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        let mut d: Vec<f64> = s.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let mut gamma_max = 1.0;
        if cfg.away_steps {
            if let Some(a) = away_vertex(&phi, &mu, cap) {
                let away_gap = area * (dot(&phi, &a) - dot(&phi, &mu));
                if away_gap > gap {
                    d = mu.iter().zip(&a).map(|(m, v)| m - v).collect();
                    gamma_max = max_away_step(&mu, &d, cap);
                }
            }
        }
        let slope = area * dot(&phi, &d);
        if !(slope < 0.0) || gamma_max <= 0.0 {
            break;
        }
        let kd = obj.apply_kernel(&d);
        let curvature = obj.coupling * area * area * dot(&d, &kd);
        let gamma = if curvature > 0.0 {
            (-slope / curvature).min(gamma_max)
        } else {
            gamma_max
        };
        for k in 0..n {
            mu[k] += gamma * d[k];
            kmu[k] += gamma * kd[k];
        }
        snap(&mut mu, cap);
        if iterations % 64 == 0 {
            kmu = obj.apply_kernel(&mu);
        }
    }
    Ok(CgOutcome {
        mu,
        energy,
        gap: gap.max(0.0),
        tol,
        iterations,
        converged: gap <= tol,
        energy_trace: trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Local search for non-convex objectives. Each round moves mass from one
/// of the `cfg.exchange` occupied cells with the highest potential to one of
/// the `cfg.exchange` unfilled cells with the lowest, taking the pair and
/// amount with the largest exact energy decrease, then re-runs Frank–Wolfe
/// from there. Stops when no move lowers the energy.
pub fn exchange_refine(
    obj: &QuadraticObjective,
    cap: f64,
    mass: f64,
    cfg: &SolverConfig,
    mut out: CgOutcome,
    rounds: usize,
) -> Result<CgOutcome> {
    let start = Instant::now();
    let area = obj.grid.cell_area();
    let n = obj.grid.len();
    let k = cfg.exchange.min(n);
    if k == 0 {
        return Ok(out);
    }
    for _ in 0..rounds {
        let phi = obj.potential(&out.mu);
        let mut donors: Vec<usize> = (0..n).filter(|&c| out.mu[c] > 0.0).collect();
        donors.sort_by(|&a, &b| phi[b].total_cmp(&phi[a]).then(a.cmp(&b)));
        donors.truncate(k);
        let mut takers: Vec<usize> = (0..n).filter(|&c| out.mu[c] < cap).collect();
        takers.sort_by(|&a, &b| phi[a].total_cmp(&phi[b]).then(a.cmp(&b)));
        takers.truncate(k);
        let mut cells: Vec<usize> = donors.iter().chain(&takers).copied().collect();
        cells.sort_unstable();
        cells.dedup();
        let columns: std::collections::HashMap<usize, Vec<f64>> = cells
            .iter()
            .map(|&c| {
                let mut e = vec![0.0; n];
                e[c] = 1.0;
                (c, obj.apply_kernel(&e))
            })
            .collect();
        let mut best: Option<(f64, usize, usize, f64)> = None;
        for &i in &donors {
            for &j in &takers {
                if i == j {
                    continue;
                }
                let t_max = out.mu[i].min(cap - out.mu[j]);
                let slope = area * (phi[j] - phi[i]);
                let curvature =
                    obj.coupling * area * area * (columns[&i][i] + columns[&j][j] - 2.0 * columns[&j][i]);
                let t = if curvature > 0.0 {
                    (-slope / curvature).clamp(0.0, t_max)
                } else {
                    t_max
                };
                let delta = slope * t + 0.5 * curvature * t * t;
                if best.is_none_or(|b| delta < b.0) {
                    best = Some((delta, i, j, t));
                }
            }
        }
        let Some((delta, i, j, t)) = best else { break };
        if !(delta < -1e-12 * (out.energy.abs() + 1.0)) {
            break;
        }
        let mut mu = out.mu.clone();
        mu[i] -= t;
        mu[j] += t;
        snap(&mut mu, cap);
        let next = conditional_gradient_from(obj, cap, mass, cfg, mu)?;
        if !(next.energy < out.energy) {
            break;
        }
        let iterations = out.iterations + next.iterations;
        let mut trace = std::mem::take(&mut out.energy_trace);
        trace.extend(&next.energy_trace);
        out = CgOutcome {
            iterations,
            energy_trace: trace,
            ..next
        };
    }
    out.wall_time += start.elapsed().as_secs_f64();
    Ok(out)
}

fn max_away_step(mu: &[f64], d: &[f64], cap: f64) -> f64 {
    let mut g = f64::INFINITY;
    for (m, dk) in mu.iter().zip(d) {
        if *dk > 0.0 {
            g = g.min((cap - m) / dk);
        } else if *dk < 0.0 {
            g = g.min(m / -dk);
        }
    }
    if g.is_finite() {
        g.max(0.0)
    } else {
        0.0
    }
}

fn snap(mu: &mut [f64], cap: f64) {
    let eps = 1e-13 * cap;
    for v in mu.iter_mut() {
        if *v < eps {
            *v = 0.0;
        } else if *v > cap - eps {
            *v = cap;
        }
    }
}

/// FISTA with monotone restarts on the same problem. Step `1/L` with
/// `L = |κ| h² Σ|K|`; stops on the same FW-gap criterion.
pub fn projected_gradient(
    obj: &QuadraticObjective,
    cap: f64,
    mass: f64,
    cfg: &SolverConfig,
) -> Result<CgOutcome> {
    let start = Instant::now();
    let area = obj.grid.cell_area();
    let n = obj.grid.len();
    check_feasible(cap, area, n, mass)?;
    let total = mass / area;
    let lip = obj.coupling.abs() * area * obj.kernel.kernel_l1();
    let step = if lip > 0.0 { 1.0 / lip } else { 1e6 };

    let mut x = project_capped(&vec![0.0; n], cap, total);
    let mut energy = obj.energy(&x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut trace = vec![energy];
    let mut iterations = 0;
    let mut gap = obj.fw_gap(&x, cap, mass)?;
    let mut tol = cfg.tolerance(energy);
    while gap > tol && iterations < cfg.max_iter {
        iterations += 1;
        let phi = obj.potential(&y);
        let trial: Vec<f64> = y.iter().zip(&phi).map(|(v, p)| v - step * p).collect();
        let x_new = project_capped(&trial, cap, total);
        let e_new = obj.energy(&x_new);
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if e_new > energy {
            // Restart momentum from the current point.
            t = 1.0;
            y = x.clone();
            continue;
        }
        let beta = (t - 1.0) / t_new;
        y = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        t = t_new;
        x = x_new;
        energy = e_new;
        trace.push(energy);
        gap = obj.fw_gap(&x, cap, mass)?;
        tol = cfg.tolerance(energy);
    }
    Ok(CgOutcome {
        mu: x,
        energy,
        gap: gap.max(0.0),
        tol,
        iterations,
        converged: gap <= tol,
        energy_trace: trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
