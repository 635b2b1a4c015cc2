//! Equilibrium measures in the field of quasi-hole point charges, the
//! inverse construction of quasi-holes for a solid target density, and the
//! Coulomb (`D`) distance.
//!
//! ```text
//! E^el[μ] = ∫ (Σ_j q_j log(1/|x - a_j|) + B|x|²/2) μ + ℓ ∬ log(1/|x - y|) μ(x) μ(y)
//! ```
//!
//! minimised over `{0 ≤ μ ≤ B/(2πℓ), ∫μ = 1}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flocking::{classify_phase, conditional_gradient, PhaseReport, QuadraticObjective, SolverConfig, DEFAULT_TAU};
use crate::grid::{CoulombOperator, Grid2D, GridConvolver, GridDensity, SignedGridField};
use crate::potentials::ModelParams;

/// Default particle number the charges are quantised against.
pub const DEFAULT_N_REF: u32 = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiHole {
    pub x: f64,
    pub y: f64,
    pub q: f64,
}

impl QuasiHole {
    pub fn new(x: f64, y: f64, q: f64) -> Self {
        Self { x, y, q }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiHoleConfig {
    #[serde(rename = "N_ref")]
    pub n_ref: u32,
    pub holes: Vec<QuasiHole>,
}

impl Default for QuasiHoleConfig {
    fn default() -> Self {
        Self::empty()
    }
}

impl QuasiHoleConfig {
    pub fn empty() -> Self {
        Self {
            n_ref: DEFAULT_N_REF,
            holes: Vec::new(),
        }
    }

    pub fn new(n_ref: u32, holes: Vec<QuasiHole>) -> Result<Self> {
        let c = Self { n_ref, holes };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ref == 0 {
            return Err(Error::InvalidParameter("N_ref must be positive".into()));
        }
        for h in &self.holes {
            if !(h.x.is_finite() && h.y.is_finite() && h.q.is_finite() && h.q >= 0.0) {
                return Err(Error::InvalidParameter(format!("bad quasi-hole {h:?}")));
            }
        }
        Ok(())
    }

    pub fn total_charge(&self) -> f64 {
        self.holes.iter().map(|h| h.q).sum()
    }

    /// Charge quantum `2/N_ref`.
    pub fn quantum(&self) -> f64 {
        2.0 / self.n_ref as f64
    }

    /// Whether every charge is an integer multiple of `2/N_ref`.
    pub fn is_quantized(&self) -> bool {
        let u = self.quantum();
        self.holes.iter().all(|h| {
            let k = h.q / u;
            (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
        })
    }

    /// Largest-remainder rounding to multiples of `2/N_ref`: the total is
    /// rounded to the nearest quantum and the units go to the sites with the
    /// largest fractional parts. Zero-charge holes are dropped.
    pub fn quantized(&self) -> Self {
        let u = self.quantum();
        let units: Vec<f64> = self.holes.iter().map(|h| h.q / u).collect();
        let total = units.iter().sum::<f64>().round() as i64;
        let mut counts: Vec<i64> = units.iter().map(|k| k.floor() as i64).collect();
        let mut left = total - counts.iter().sum::<i64>();
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = units[a] - units[a].floor();
            let fb = units[b] - units[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take(order.len() * 2) {
            if left <= 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        let holes = self
            .holes
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c > 0)
            .map(|(h, &c)| QuasiHole::new(h.x, h.y, c as f64 * u))
            .collect();
        Self {
            n_ref: self.n_ref,
            holes,
        }
    }

    /// Holes within `h/10` of a cell centre are moved by `(h/7, h/13)`.
    pub fn shifted_off_nodes(&self, grid: &Grid2D) -> Result<Self> {
        let h = grid.spacing();
        let near_node = |p: [f64; 2]| {
            let off = |c: f64| {
                let t = (c + grid.half_width()) / h - 0.5;
                (t - t.round()) * h
            };
            off(p[0]).hypot(off(p[1])) < 0.1 * h
        };
        let mut holes = self.holes.clone();
        for hole in &mut holes {
            if near_node(hole.position()) {
                hole.x += h / 7.0;
                hole.y += h / 13.0;
                if near_node(hole.position()) {
                    return Err(Error::HoleOnNode { x: hole.x, y: hole.y });
                }
            }
        }
        Ok(Self {
            n_ref: self.n_ref,
            holes,
        })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `Σ_j q_j log(1/|x - a_j|) + B|x|²/2` at the cell centres. Holes must
/// already be off the nodes.
pub fn one_body_potential(holes: &QuasiHoleConfig, params: &ModelParams, grid: &Grid2D) -> SignedGridField {
    let values = grid
        .centers()
        .map(|x| {
            let mut u = 0.5 * params.b * (x[0] * x[0] + x[1] * x[1]);
            for h in &holes.holes {
                u -= h.q * (x[0] - h.x).hypot(x[1] - h.y).ln();
            }
            u
        })
        .collect();
    SignedGridField::new(*grid, values).expect("holes are off the quadrature nodes")
}

fn objective(holes: &QuasiHoleConfig, params: &ModelParams, grid: &Grid2D) -> QuadraticObjective {
    QuadraticObjective::new(
        *grid,
        one_body_potential(holes, params, grid).into_values(),
        2.0 * params.ell as f64,
        GridConvolver::log_kernel(*grid),
    )
}

/// `∫Uμ + ℓ·2D(μ, μ)` by midpoint quadrature with the regularised kernel.
pub fn electrostatic_energy(mu: &GridDensity, holes: &QuasiHoleConfig, params: &ModelParams) -> Result<f64> {
    let holes = holes.shifted_off_nodes(mu.grid())?;
    Ok(objective(&holes, params, mu.grid()).energy(mu.values()))
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub density: GridDensity,
    pub energy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub phase: PhaseReport,
    /// Holes as actually used (after the off-node shift).
    pub holes: QuasiHoleConfig,
}

/// Frank–Wolfe minimisation of the electrostatic energy under the cap.
pub fn solve_equilibrium(
    holes: &QuasiHoleConfig,
    params: &ModelParams,
    grid: &Grid2D,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    params.validate()?;
    holes.validate()?;
    let l = grid.half_width();
    if let Some(h) = holes.holes.iter().find(|h| h.x.abs() > l || h.y.abs() > l) {
        return Err(Error::InvalidParameter(format!("quasi-hole ({}, {}) outside the grid", h.x, h.y)));
    }
    let holes = holes.shifted_off_nodes(grid)?;
    let out = conditional_gradient(&objective(&holes, params, grid), params.cap(), 1.0, cfg)?.into_result()?;
    let density = GridDensity::new(*grid, out.mu)?;
    let phase = classify_phase(&density, params.cap(), DEFAULT_TAU);
    Ok(EquilibriumResult {
        density,
        energy: out.energy,
        gap: out.gap,
        iterations: out.iterations,
        phase,
        holes,
    })
}

/// Half width that holds the equilibrium droplet `√((2ℓ + Σq)/B)` with a
/// 50% margin and every hole.
pub fn default_half_width(holes: &QuasiHoleConfig, params: &ModelParams) -> f64 {
    let r = ((2.0 * params.ell as f64 + holes.total_charge()) / params.b).sqrt();
    let far = holes
        .holes
        .iter()
        .map(|h| h.x.abs().max(h.y.abs()))
        .fold(0.0, f64::max);
    (1.5 * r).max(far + 0.5 * r)
}

/// Innermost and outermost centre distance from `center` among cells with
/// `μ ≥ cap/2`.
pub fn radial_extent(mu: &GridDensity, center: [f64; 2], cap: f64) -> Option<(f64, f64)> {
    let g = mu.grid();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut any = false;
    for (k, &v) in mu.values().iter().enumerate() {
        if v >= 0.5 * cap {
            let x = g.center(k);
            let r = (x[0] - center[0]).hypot(x[1] - center[1]);
            lo = lo.min(r);
            hi = hi.max(r);
            any = true;
        }
    }
    any.then_some((lo, hi))
}

/// `D(μ₁ - μ₂, μ₁ - μ₂)`.
pub fn d_metric(mu1: &GridDensity, mu2: &GridDensity) -> Result<f64> {
    Ok(CoulombOperator::new(*mu1.grid()).energy(mu1.difference(mu2)?.values()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DMetricCheck {
    /// `|∫(μ₁ - μ₂)χ|`.
    pub lhs: f64,
    /// `‖∇χ‖₂ · D(μ₁ - μ₂)^{1/2}`.
    pub rhs: f64,
    pub grad_norm: f64,
    pub d: f64,
}

impl DMetricCheck {
    pub fn holds(&self, rel: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + rel)
    }
}

/// `‖∇χ‖₂` with centred differences (one-sided on the border).
pub fn gradient_l2(chi: &SignedGridField) -> f64 {
    let g = chi.grid();
    let n = g.n();
    let h = g.spacing();
    let v = chi.values();
    let diff = |i: usize, at: &dyn Fn(usize) -> f64| -> f64 {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
        (at(b) - at(a)) / ((b - a) as f64 * h)
    };
    let mut s = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let gx = diff(ix, &|j| v[g.index(j, iy)]);
            let gy = diff(iy, &|j| v[g.index(ix, j)]);
            s += gx * gx + gy * gy;
        }
    }
    (s * g.cell_area()).sqrt()
}

/// Both sides of `|∫(μ₁ - μ₂)χ| ≤ ‖∇χ‖₂ D(μ₁ - μ₂)^{1/2}`.
pub fn d_metric_test(mu1: &GridDensity, mu2: &GridDensity, chi: &SignedGridField) -> Result<DMetricCheck> {
    let (m1, m2) = (mu1.mass(), mu2.mass());
    if (m1 - m2).abs() > 1e-9 * m1.max(m2).max(1.0) {
        return Err(Error::InvalidDensity(format!("masses differ: {m1} vs {m2}")));
    }
    mu1.grid().check_same(chi.grid())?;
    let sigma = mu1.difference(mu2)?;
    let lhs = (mu1.grid().cell_area() * sigma.values().iter().zip(chi.values()).map(|(s, c)| s * c).sum::<f64>()).abs();
    let d = CoulombOperator::new(*mu1.grid()).energy(sigma.values()).max(0.0);
    let grad_norm = gradient_l2(chi);
    Ok(DMetricCheck {
        lhs,
        rhs: grad_norm * d.sqrt(),
        grad_norm,
        d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseOptions {
    /// `None` leaves the charges unrounded (continuum studies).
    pub n_ref: Option<u32>,
    pub tau: f64,
    pub solver: SolverConfig,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            n_ref: Some(DEFAULT_N_REF),
            tau: DEFAULT_TAU,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InverseResult {
    pub holes: QuasiHoleConfig,
    /// `D(μ^el - μ^sol)` for the equilibrium generated by `holes`.
    pub distance: f64,
    pub equilibrium: EquilibriumResult,
    /// Area of the depletion region the charges were computed from.
    pub depleted_area: f64,
}

/// Cells of the depletion region: unsaturated cells whose centres lie at
/// least one cell inside the outermost saturated centre, measured from the
/// origin.
pub fn depletion_cells(mu_sol: &GridDensity, cap: f64) -> Vec<usize> {
    let g = mu_sol.grid();
    let radius = |k: usize| {
        let x = g.center(k);
        x[0].hypot(x[1])
    };
    let values = mu_sol.values();
    let reach = (0..g.len())
        .filter(|&k| values[k] >= 0.5 * cap)
        .map(radius)
        .fold(f64::NEG_INFINITY, f64::max);
    (0..g.len())
        .filter(|&k| values[k] < 0.5 * cap && radius(k) < reach - g.spacing())
        .collect()
}

/// Places quasi-holes on a `δ`-lattice over the depletion region of a solid
/// target, each carrying `(B/π)·(depleted area in its lattice cell)` at the
/// centroid of that area, then solves the direct problem to measure the
/// achieved `D` distance.
pub fn inverse_electrostatic(
    mu_sol: &GridDensity,
    params: &ModelParams,
    delta: f64,
    opts: &InverseOptions,
) -> Result<InverseResult> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("δ must be positive, got {delta}")));
    }
    let cap = params.cap();
    let report = classify_phase(mu_sol, cap, opts.tau);
    if report.intermediate_area > report.allowance {
        return Err(Error::NotSolid {
            intermediate_area: report.intermediate_area,
            allowance: report.allowance,
        });
    }
    if (mu_sol.mass() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDensity(format!("target mass {} is not 1", mu_sol.mass())));
    }
    let g = mu_sol.grid();
    let a = g.cell_area();
    let cells = depletion_cells(mu_sol, cap);
    // Lattice sites keyed by (floor(x/δ), floor(y/δ)); BTreeMap keeps the
    // output order deterministic.
    let mut sites: std::collections::BTreeMap<(i64, i64), (f64, f64, f64)> = Default::default();
    for &k in &cells {
        let x = g.center(k);
        let key = ((x[0] / delta).floor() as i64, (x[1] / delta).floor() as i64);
        let e = sites.entry(key).or_insert((0.0, 0.0, 0.0));
        e.0 += a;
        e.1 += a * x[0];
        e.2 += a * x[1];
    }
    let holes: Vec<QuasiHole> = sites
        .values()
        .map(|&(area, sx, sy)| QuasiHole::new(sx / area, sy / area, params.b * area / std::f64::consts::PI))
        .collect();
    let mut config = QuasiHoleConfig {
        n_ref: opts.n_ref.unwrap_or(DEFAULT_N_REF),
        holes,
    };
    if opts.n_ref.is_some() {
        config = config.quantized();
    }
    let equilibrium = solve_equilibrium(&config, params, g, &opts.solver)?;
    let distance = d_metric(&equilibrium.density, mu_sol)?;
    Ok(InverseResult {
        holes: config,
        distance,
        equilibrium,
        depleted_area: cells.len() as f64 * a,
    })
}
