//! Capacity-constrained mean-field ("flocking") minimisation:
//!
//! ```text
//! E^flo = inf { ∫ vμ + (λ/2) ∬ w(x-y) μ(x) μ(y)  :  0 ≤ μ ≤ B/(2πℓ), ∫μ = 1 }
//! ```
//!
//! solved on a grid by Frank–Wolfe with the bathtub filling as linear
//! minimisation oracle, together with phase classification, KKT residuals,
//! coupling sweeps and the relaxed-cap (`cap·(1+ε)`) variant.

mod lmo;
mod phase;
mod solver;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lmo::{bathtub_lmo, project_capped};
pub use phase::{classify_phase, interface_allowance, kkt_residual, phase_report, KktResidual, Phase, PhaseReport};
pub use solver::{conditional_gradient, conditional_gradient_from, exchange_refine, projected_gradient, CgOutcome, QuadraticObjective, SolverConfig};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, GridDensity};
use crate::potentials::{ExternalPotential, InteractionPotential, ModelConfig, ModelParams};

/// Default phase tolerance `τ` (relative to the cap).
pub const DEFAULT_TAU: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct FlockingProblem {
    pub params: ModelParams,
    pub v: ExternalPotential,
    pub w: InteractionPotential,
    pub grid: Grid2D,
    pub mass: f64,
    /// `ε ≥ 0`; the cap becomes `cap·(1 + ε)`.
    pub cap_scale: f64,
}

impl FlockingProblem {
    pub fn new(model: &ModelConfig, grid: Grid2D) -> Result<Self> {
        model.validate()?;
        let p = Self {
            params: model.params,
            v: model.v.clone(),
            w: model.w.clone(),
            grid,
            mass: 1.0,
            cap_scale: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.cap_scale >= 0.0) {
            return Err(Error::InvalidParameter(format!("cap scale must be >= 0, got {}", self.cap_scale)));
        }
        let capacity = self.cap() * self.grid.area();
        if self.mass > capacity {
            return Err(Error::Infeasible {
                mass: self.mass,
                capacity,
            });
        }
        Ok(())
    }

    /// Effective density cap `B/(2πℓ)·(1 + ε)`.
    pub fn cap(&self) -> f64 {
        self.params.cap() * (1.0 + self.cap_scale)
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            params: self.params.with_lambda(lambda),
            ..self.clone()
        }
    }

    pub fn with_cap_scale(&self, eps: f64) -> Self {
        Self {
            cap_scale: eps,
            ..self.clone()
        }
    }

    /// `λ = 0`, or `λ > 0` with a Fourier-positive `w`: the energy is convex.
    pub fn is_convex(&self) -> bool {
        self.params.lambda == 0.0 || (self.params.lambda > 0.0 && self.w.fourier_positive())
    }

    pub fn objective(&self) -> QuadraticObjective {
        QuadraticObjective::new(
            self.grid,
            self.v.sample(&self.grid).into_values(),
            self.params.lambda,
            self.w.convolver(self.grid),
        )
    }
}

/// `∫vμ + (λ/2)∬ w μ μ` by midpoint quadrature.
pub fn mf_energy(mu: &GridDensity, problem: &FlockingProblem) -> Result<f64> {
    problem.grid.check_same(mu.grid())?;
    Ok(problem.objective().energy(mu.values()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Convex problem: the FW gap bounds `E(μ) - E^flo`.
    GlobalMinimizer,
    /// Non-convex problem: only first-order stationarity is certified.
    StationaryPoint,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub minimizer: GridDensity,
    pub energy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub certificate: Certificate,
    pub energy_trace: Vec<f64>,
}

impl SolveReport {
    fn from_outcome(out: CgOutcome, problem: &FlockingProblem) -> Result<Self> {
        let out = out.into_result()?;
        Ok(Self {
            minimizer: GridDensity::new(problem.grid, out.mu)?,
            energy: out.energy,
            gap: out.gap,
            iterations: out.iterations,
            wall_time: out.wall_time,
            certificate: if problem.is_convex() {
                Certificate::GlobalMinimizer
            } else {
                Certificate::StationaryPoint
            },
            energy_trace: out.energy_trace,
        })
    }
}

/// Frank–Wolfe solve of the flocking problem. Non-convergence is an error.
pub fn solve_flocking(problem: &FlockingProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    problem.validate()?;
    let obj = problem.objective();
    let mut out = conditional_gradient(&obj, problem.cap(), problem.mass, cfg)?;
    if !problem.is_convex() && out.converged {
        out = exchange_refine(&obj, problem.cap(), problem.mass, cfg, out, 1000)?;
    }
    SolveReport::from_outcome(out, problem)
}

/// Projected-gradient cross-solver for the same problem.
pub fn solve_flocking_projected(problem: &FlockingProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    problem.validate()?;
    let out = projected_gradient(&problem.objective(), problem.cap(), problem.mass, cfg)?;
    SolveReport::from_outcome(out, problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub energy: Option<f64>,
    pub gap: Option<f64>,
    pub phase: Option<Phase>,
    pub intermediate_area: Option<f64>,
    pub saturated_area: Option<f64>,
    pub certificate: Option<Certificate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub rows: Vec<SweepRow>,
    /// Largest `λ₀` such that every row with `|λ| ≤ λ₀` classified Solid.
    pub lambda0_estimate: Option<f64>,
}

/// Frank–Wolfe, retried with the projected solver (at least 50 000
/// iterations) when it runs out of iterations. Interior optima are the
/// usual culprit.
pub fn solve_with_fallback(problem: &FlockingProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    match solve_flocking(problem, cfg) {
        Err(Error::NotConverged { .. }) => {
            let pg = SolverConfig {
                max_iter: cfg.max_iter.max(50_000),
                ..*cfg
            };
            solve_flocking_projected(problem, &pg)
        }
        other => other,
    }
}

/// One solve per coupling value, rows in input order.
pub fn lambda_sweep(problem: &FlockingProblem, lambdas: &[f64], cfg: &SolverConfig) -> LambdaSweep {
    let rows: Vec<SweepRow> = lambdas
        .par_iter()
        .map(|&lambda| {
            let p = problem.with_lambda(lambda);
            match solve_with_fallback(&p, cfg) {
                Ok(rep) => {
                    let ph = classify_phase(&rep.minimizer, p.cap(), DEFAULT_TAU);
                    SweepRow {
                        lambda,
                        energy: Some(rep.energy),
                        gap: Some(rep.gap),
                        phase: Some(ph.phase),
                        intermediate_area: Some(ph.intermediate_area),
                        saturated_area: Some(ph.saturated_area),
                        certificate: Some(rep.certificate),
                        error: None,
                    }
                }
                Err(e) => SweepRow {
                    lambda,
                    energy: None,
                    gap: None,
                    phase: None,
                    intermediate_area: None,
                    saturated_area: None,
                    certificate: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let lambda0_estimate = solid_range(&rows);
    LambdaSweep {
        rows,
        lambda0_estimate,
    }
}

fn solid_range(rows: &[SweepRow]) -> Option<f64> {
    let mut by_size: Vec<&SweepRow> = rows.iter().collect();
    by_size.sort_by(|a, b| a.lambda.abs().total_cmp(&b.lambda.abs()));
    let mut best = None;
    for row in by_size {
        if row.phase != Some(Phase::Solid) {
            break;
        }
        best = Some(row.lambda.abs());
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRow {
    pub eps: f64,
    pub energy: Option<f64>,
    /// `(E^flo - E^flo_ε)/ε` (absent for `ε = 0`).
    pub slope: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTable {
    pub base_energy: f64,
    pub rows: Vec<PerturbedRow>,
    /// Least-squares slope of `E^flo - E^flo_ε` against `ε` through 0.
    pub c_hat: Option<f64>,
    /// `E^flo_ε ≤ E^flo + tol` on every row and non-increasing in `ε`.
    pub monotone: bool,
}

/// Solves the relaxed-cap problem for each `ε` and fits `E^flo - E^flo_ε ≈ Ĉ ε`.
pub fn solve_perturbed(problem: &FlockingProblem, eps: &[f64], cfg: &SolverConfig) -> Result<PerturbationTable> {
    if let Some(e) = eps.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::InvalidParameter(format!("ε must be >= 0, got {e}")));
    }
    let base = solve_flocking(&problem.with_cap_scale(0.0), cfg)?;
    let tol_of = |e: f64| cfg.tol.unwrap_or(1e-6 * (e.abs() + 1.0));
    let rows: Vec<PerturbedRow> = eps
        .par_iter()
        .map(|&e| match solve_flocking(&problem.with_cap_scale(e), cfg) {
            Ok(rep) => PerturbedRow {
                eps: e,
                energy: Some(rep.energy),
                slope: (e > 0.0).then(|| (base.energy - rep.energy) / e),
                error: None,
            },
            Err(err) => PerturbedRow {
                eps: e,
                energy: None,
                slope: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for r in &rows {
        if let (Some(en), true) = (r.energy, r.eps > 0.0) {
            num += r.eps * (base.energy - en);
            den += r.eps * r.eps;
        }
    }
    let mut sorted: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.energy.map(|en| (r.eps, en))).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let below_base = sorted.iter().all(|&(_, en)| en <= base.energy + tol_of(base.energy));
    let non_increasing = sorted.windows(2).all(|p| p[1].1 <= p[0].1 + tol_of(p[0].1));
    Ok(PerturbationTable {
        base_energy: base.energy,
        rows,
        c_hat: (den > 0.0).then(|| num / den),
        monotone: below_base && non_increasing,
    })
}

/// Default half width so that the unit-mass cap disk of radius `√(2ℓ/B)`
/// fits within half the box.
pub fn default_half_width(params: &ModelParams) -> f64 {
    2.0 * params.droplet_radius()
}

#[cfg(test)]
mod tests;
