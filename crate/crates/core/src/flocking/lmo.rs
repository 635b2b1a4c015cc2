//! Linear minimisation over `{0 ≤ μ ≤ cap, ∫μ = mass}` and the Euclidean
//! projection onto the same set.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::grid::{GridDensity, SignedGridField};

/// Bathtub filling: cells sorted by potential (ties in flat index order,
/// i.e. lexicographic `(iy, ix)`) are filled to `cap` until the mass runs
/// out; the boundary cell takes the remainder.
pub fn bathtub_lmo(potential: &SignedGridField, cap: f64, mass: f64) -> Result<GridDensity> {
    let grid = *potential.grid();
    let values = bathtub_values(potential.values(), cap, grid.cell_area(), mass)?;
    GridDensity::new(grid, values)
}

#[inline]
fn ascending(phi: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| phi[a].total_cmp(&phi[b]).then(a.cmp(&b))
}

pub(crate) fn check_feasible(cap: f64, cell_area: f64, cells: usize, mass: f64) -> Result<()> {
    let capacity = cap * cell_area * cells as f64;
    if !(mass >= 0.0) || mass > capacity * (1.0 + 1e-12) {
        return Err(Error::Infeasible { mass, capacity });
    }
    Ok(())
}

pub(crate) fn bathtub_values(phi: &[f64], cap: f64, cell_area: f64, mass: f64) -> Result<Vec<f64>> {
    let n = phi.len();
    check_feasible(cap, cell_area, n, mass)?;
    let per_cell = cap * cell_area;
    let nfull = ((mass / per_cell).floor() as usize).min(n);
    let rem = if nfull == n {
        0.0
    } else {
        ((mass - nfull as f64 * per_cell) / cell_area).clamp(0.0, cap)
    };
    let mut out = vec![0.0; n];
    let mut idx: Vec<usize> = (0..n).collect();
    if nfull < n {
        idx.select_nth_unstable_by(nfull, ascending(phi));
        out[idx[nfull]] = rem;
    }
    for &k in &idx[..nfull] {
        out[k] = cap;
    }
    Ok(out)
}

/// Maximiser of `⟨φ, ·⟩` over the smallest face of the feasible set
/// containing `mu`: cells at a bound stay there, the free cells are refilled
/// from the highest potential down. `None` when no cell is free.
pub(crate) fn away_vertex(phi: &[f64], mu: &[f64], cap: f64) -> Option<Vec<f64>> {
    let eps = 1e-12 * cap;
    let mut free: Vec<usize> = (0..mu.len())
        .filter(|&k| mu[k] > eps && mu[k] < cap - eps)
        .collect();
    if free.is_empty() {
        return None;
    }
    let mut budget: f64 = free.iter().map(|&k| mu[k]).sum();
    let mut out = mu.to_vec();
    free.sort_by(|a, b| ascending(phi)(a, b).reverse());
    for &k in &free {
        let take = budget.min(cap);
        out[k] = take;
        budget -= take;
        if budget <= 0.0 {
            budget = 0.0;
        }
    }
    Some(out)
}

/// Euclidean projection of `y` onto `{0 ≤ x ≤ cap, Σx = total}` by bisection
/// on the shift `θ` in `x = clamp(y - θ, 0, cap)`.
pub fn project_capped(y: &[f64], cap: f64, total: f64) -> Vec<f64> {
    let sum_at = |theta: f64| -> f64 { y.iter().map(|v| (v - theta).clamp(0.0, cap)).sum() };
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (ymin - cap, ymax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sum_at(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let mut x: Vec<f64> = y.iter().map(|v| (v - theta).clamp(0.0, cap)).collect();
    // Spread the last rounding residue over the free cells.
    let free: Vec<usize> = (0..x.len()).filter(|&k| x[k] > 0.0 && x[k] < cap).collect();
    if !free.is_empty() {
        let shift = (total - x.iter().sum::<f64>()) / free.len() as f64;
        for k in free {
            x[k] = (x[k] + shift).clamp(0.0, cap);
        }
    }
    x
}
