//! Liquid / intermediate / solid classification and the variational
//! inequalities `Φ ≤ γ` on `{μ = cap}`, `Φ = γ` on `{0 < μ < cap}`,
//! `Φ ≥ γ` on `{μ = 0}`.

use serde::{Deserialize, Serialize};

use super::FlockingProblem;
use crate::error::Result;
use crate::grid::GridDensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Liquid,
    Intermediate,
    Solid,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Liquid => "liquid",
            Phase::Intermediate => "intermediate",
            Phase::Solid => "solid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub gamma: f64,
    pub saturated: f64,
    pub intermediate: f64,
    pub zero: f64,
}

impl KktResidual {
    pub fn total(&self) -> f64 {
        self.saturated + self.intermediate + self.zero
    }

    pub fn max(&self) -> f64 {
        self.saturated.max(self.intermediate).max(self.zero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub saturated_area: f64,
    pub intermediate_area: f64,
    pub zero_area: f64,
    /// Interface allowance the areas were compared against.
    pub allowance: f64,
    pub tau: f64,
    pub gamma: Option<f64>,
    pub violations: Option<KktResidual>,
}

/// `3h·√(4π·A_sat)`: three cells of interface per unit perimeter of a disk
/// with the saturated area.
pub fn interface_allowance(h: f64, saturated_area: f64) -> f64 {
    3.0 * h * (4.0 * std::f64::consts::PI * saturated_area).sqrt()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Level {
    Saturated,
    Intermediate,
    Zero,
}

fn level(v: f64, cap: f64, tau: f64) -> Level {
    if v >= (1.0 - tau) * cap {
        Level::Saturated
    } else if v <= tau * cap {
        Level::Zero
    } else {
        Level::Intermediate
    }
}

pub fn classify_phase(mu: &GridDensity, cap: f64, tau: f64) -> PhaseReport {
    let grid = mu.grid();
    let a = grid.cell_area();
    let (mut sat, mut int, mut zero) = (0usize, 0usize, 0usize);
    for &v in mu.values() {
        match level(v, cap, tau) {
            Level::Saturated => sat += 1,
            Level::Intermediate => int += 1,
            Level::Zero => zero += 1,
        }
    }
    let saturated_area = sat as f64 * a;
    let intermediate_area = int as f64 * a;
    let allowance = interface_allowance(grid.spacing(), saturated_area);
    let phase = if intermediate_area <= allowance {
        Phase::Solid
    } else if saturated_area <= allowance {
        Phase::Liquid
    } else {
        Phase::Intermediate
    };
    PhaseReport {
        phase,
        saturated_area,
        intermediate_area,
        zero_area: zero as f64 * a,
        allowance,
        tau,
        gamma: None,
        violations: None,
    }
}

/// Multiplier `γ` minimising the total `h²`-weighted violation, found by a
/// sweep over the sorted breakpoints of the convex piecewise-linear total.
pub fn kkt_residual(mu: &GridDensity, problem: &FlockingProblem, tau: f64) -> Result<KktResidual> {
    problem.grid.check_same(mu.grid())?;
    let phi = problem.objective().potential(mu.values());
    Ok(kkt_from_potential(&phi, mu.values(), problem.cap(), tau, problem.grid.cell_area()))
}

pub(crate) fn kkt_from_potential(phi: &[f64], mu: &[f64], cap: f64, tau: f64, area: f64) -> KktResidual {
    let levels: Vec<Level> = mu.iter().map(|&v| level(v, cap, tau)).collect();
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[a].total_cmp(&phi[b]));
    // Slope as γ → -∞: each saturated and intermediate cell contributes -1.
    let mut slope = -(levels.iter().filter(|l| **l != Level::Zero).count() as i64);
    let mut gamma = order.first().map_or(0.0, |&k| phi[k]);
    for &k in &order {
        gamma = phi[k];
        slope += match levels[k] {
            Level::Saturated => 1,
            Level::Intermediate => 2,
            Level::Zero => 1,
        };
        if slope >= 0 {
            break;
        }
    }
    let (mut s, mut i, mut z) = (0.0, 0.0, 0.0);
    for (k, &p) in phi.iter().enumerate() {
        match levels[k] {
            Level::Saturated => s += (p - gamma).max(0.0),
            Level::Intermediate => i += (p - gamma).abs(),
            Level::Zero => z += (gamma - p).max(0.0),
        }
    }
    KktResidual {
        gamma,
        saturated: area * s,
        intermediate: area * i,
        zero: area * z,
    }
}

/// Classification plus KKT residuals against the problem's potential.
pub fn phase_report(mu: &GridDensity, problem: &FlockingProblem, tau: f64) -> Result<PhaseReport> {
    let mut rep = classify_phase(mu, problem.cap(), tau);
    let kkt = kkt_residual(mu, problem, tau)?;
    rep.gamma = Some(kkt.gamma);
    rep.violations = Some(kkt);
    Ok(rep)
}
