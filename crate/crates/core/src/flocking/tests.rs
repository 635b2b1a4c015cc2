use super::*;
use crate::grid::{CellMask, SignedGridField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quadratic_problem(n: usize, lambda: f64, w: InteractionPotential) -> FlockingProblem {
    let params = ModelParams::new(1.0, 1, lambda).unwrap();
    let grid = Grid2D::new(default_half_width(&params), n).unwrap();
    let model = ModelConfig {
        params,
        v: ExternalPotential::quadratic(),
        w,
    };
    FlockingProblem::new(&model, grid).unwrap()
}

fn symmetric_difference_area(mu: &GridDensity, center: [f64; 2], radius: f64, cap: f64) -> f64 {
    let g = mu.grid();
    let disk = CellMask::disk(g, center, radius);
    let mut diff = 0.0;
    for k in 0..g.len() {
        let target = if disk.contains(k) { cap } else { 0.0 };
        diff += (mu.values()[k] - target).abs() / cap;
    }
    diff * g.cell_area()
}

#[test]
fn disk_energy_matches_closed_form() {
    let p = quadratic_problem(128, 0.0, InteractionPotential::gaussian(1.0, 0.5));
    let r = p.params.droplet_radius();
    let disk = CellMask::disk(&p.grid, [0.0, 0.0], r);
    let mu = GridDensity::indicator(p.grid, &disk, p.cap()).unwrap();
    let e = mf_energy(&mu, &p).unwrap();
    let h = p.grid.spacing();
    // |x|² ≤ R² on the boundary layer of width h around the circle.
    let allowance = 2.0 * h * 2.0 * std::f64::consts::PI * r * p.cap() * r * r;
    assert!((e - 1.0).abs() <= allowance, "{e}");
}

#[test]
fn trivial_energies() {
    let p = quadratic_problem(16, 1.0, InteractionPotential::gaussian(1.0, 0.5));
    assert_eq!(mf_energy(&GridDensity::zeros(p.grid), &p).unwrap(), 0.0);

    // A kernel wide enough to be constant on the grid to double precision.
    let c = 0.7;
    let mut wide = quadratic_problem(16, 1.0, InteractionPotential::gaussian(c, 1e9));
    wide.params.lambda = 1.0;
    let mu = GridDensity::probability(wide.grid, (0..256).map(|k| 1.0 + (k % 7) as f64).collect()).unwrap();
    let linear = wide.v.sample(&wide.grid).pair(&mu).unwrap();
    let e = mf_energy(&mu, &wide).unwrap();
    assert!((e - (linear + c / 2.0)).abs() < 1e-9, "{e}");
}

#[test]
fn zero_coupling_is_one_bathtub() {
    let p = quadratic_problem(32, 0.0, InteractionPotential::gaussian(1.0, 0.5));
    let rep = solve_flocking(&p, &SolverConfig::default()).unwrap();
    let phi = p.v.sample(&p.grid);
    let s = bathtub_lmo(&phi, p.cap(), 1.0).unwrap();
    assert_eq!(rep.iterations, 0);
    assert_eq!(rep.minimizer.values(), s.values());
    assert_eq!(rep.energy, phi.pair(&s).unwrap());
    assert_eq!(rep.certificate, Certificate::GlobalMinimizer);
}

#[test]
fn radial_minimizer_is_a_disk() {
    let p = quadratic_problem(64, 0.05, InteractionPotential::gaussian(1.0, 0.5));
    let rep = solve_flocking(&p, &SolverConfig::default()).unwrap();
    let mu = &rep.minimizer;
    assert!((mu.mass() - 1.0).abs() <= 1e-10);
    assert!(mu.max() <= p.cap() + 1e-10);
    let r = (1.0 / (std::f64::consts::PI * p.cap())).sqrt();
    let h = p.grid.spacing();
    let sd = symmetric_difference_area(mu, [0.0, 0.0], r, p.cap());
    assert!(sd <= 4.0 * h * 2.0 * std::f64::consts::PI * r, "{sd}");
    assert_eq!(classify_phase(mu, p.cap(), DEFAULT_TAU).phase, Phase::Solid);
    for pair in rep.energy_trace.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12);
    }
}

#[test]
fn projected_gradient_agrees_with_frank_wolfe() {
    let p = quadratic_problem(32, 0.08, InteractionPotential::gaussian(1.0, 0.7));
    let cfg = SolverConfig::with_tol(1e-7);
    let fw = solve_flocking(&p, &cfg).unwrap();
    let pg = solve_flocking_projected(&p, &SolverConfig { max_iter: 20_000, ..cfg }).unwrap();
    assert!((fw.energy - pg.energy).abs() <= 10.0 * 1e-7, "{} vs {}", fw.energy, pg.energy);
}

/// All densities with per-cell mass a multiple of `1/units` and at most
/// `cap·h²` per cell.
fn lattice_minimum(obj: &QuadraticObjective, cap_cells: usize, units: usize) -> f64 {
    let n = obj.grid().len();
    let area = obj.grid().cell_area();
    let mut best = f64::INFINITY;
    let mut counts = vec![0usize; n];
    fn rec(k: usize, left: usize, cap: usize, counts: &mut [usize], f: &mut dyn FnMut(&[usize])) {
        if k + 1 == counts.len() {
            if left <= cap {
                counts[k] = left;
                f(counts);
            }
            return;
        }
        for c in 0..=left.min(cap) {
            counts[k] = c;
            rec(k + 1, left - c, cap, counts, f);
        }
    }
    rec(0, units, cap_cells, &mut counts, &mut |c| {
        let mu: Vec<f64> = c.iter().map(|&u| u as f64 / units as f64 / area).collect();
        best = best.min(obj.energy(&mu));
    });
    best
}

#[test]
fn three_by_three_matches_lattice_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // B chosen so one cell holds exactly a quarter of the mass.
    let b = 2.0 * std::f64::consts::PI * 0.25;
    for lambda in [0.1, -0.1] {
        for _ in 0..3 {
            let grid = Grid2D::new(1.5, 3).unwrap();
            let values: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let model = ModelConfig {
                params: ModelParams::new(b, 1, lambda).unwrap(),
                v: ExternalPotential::Tabulated {
                    half_width: 1.5,
                    n: 3,
                    values,
                },
                w: InteractionPotential::gaussian(0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()),
            };
            let p = FlockingProblem::new(&model, grid).unwrap();
            let rep = solve_flocking(&p, &SolverConfig::with_tol(1e-10)).unwrap();
            let brute = lattice_minimum(&p.objective(), 4, 16);
            assert!(rep.energy <= brute + 1e-4, "λ={lambda}: {} vs {brute}", rep.energy);
        }
    }
}

#[test]
fn liquid_when_repulsion_keeps_density_below_cap() {
    let params = ModelParams::new(60.0, 1, 3.0).unwrap();
    let grid = Grid2D::new(4.0, 48).unwrap();
    let model = ModelConfig {
        params,
        v: ExternalPotential::Quadratic {
            strength: 0.05,
            center: [0.0, 0.0],
        },
        w: InteractionPotential::gaussian(1.0, 1.0),
    };
    let p = FlockingProblem::new(&model, grid).unwrap();
    // Frank–Wolfe is slow on interior optima; the accelerated solver is not.
    let cfg = SolverConfig {
        max_iter: 50_000,
        ..SolverConfig::default()
    };
    let rep = solve_flocking_projected(&p, &cfg).unwrap();
    assert!(rep.minimizer.max() < p.cap());
    assert_eq!(classify_phase(&rep.minimizer, p.cap(), DEFAULT_TAU).phase, Phase::Liquid);
}

#[test]
fn exact_disk_is_solid() {
    let g = Grid2D::new(2.0, 40).unwrap();
    let mu = GridDensity::indicator(g, &CellMask::disk(&g, [0.0, 0.0], 1.0), 0.3).unwrap();
    let rep = classify_phase(&mu, 0.3, DEFAULT_TAU);
    assert_eq!(rep.phase, Phase::Solid);
    assert_eq!(rep.intermediate_area, 0.0);
    let total = rep.saturated_area + rep.intermediate_area + rep.zero_area;
    assert!((total - g.area()).abs() < 1e-9);
}

#[test]
fn bathtub_multiplier_is_the_fill_level() {
    let p = quadratic_problem(32, 0.0, InteractionPotential::gaussian(1.0, 0.5));
    let rep = solve_flocking(&p, &SolverConfig::default()).unwrap();
    let kkt = kkt_residual(&rep.minimizer, &p, DEFAULT_TAU).unwrap();
    let v = p.v.sample(&p.grid);
    let fill = rep
        .minimizer
        .values()
        .iter()
        .zip(v.values())
        .filter(|(m, _)| **m > 0.0)
        .map(|(_, x)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let next = v
        .values()
        .iter()
        .filter(|x| **x > fill)
        .fold(f64::INFINITY, |a, b| a.min(*b));
    assert!(kkt.gamma >= fill - 1e-12 && kkt.gamma <= next + 1e-12);
    // At most one boundary cell's worth of violation.
    let cell = p.grid.cell_area() * (next - fill).abs().max(1e-300);
    assert!(kkt.total() <= cell + 1e-12, "{kkt:?}");
}

#[test]
fn converged_minimizer_satisfies_the_variational_inequalities() {
    let p = quadratic_problem(48, 0.05, InteractionPotential::gaussian(1.0, 0.5));
    let tol = 1e-8;
    let rep = solve_flocking(&p, &SolverConfig::with_tol(tol)).unwrap();
    let phi = SignedGridField::new(p.grid, p.objective().potential(rep.minimizer.values())).unwrap();
    let kkt = kkt_residual(&rep.minimizer, &p, DEFAULT_TAU).unwrap();
    assert!(kkt.max() <= 10.0 * tol * phi.sup_norm(), "{kkt:?}");
}

#[test]
fn spread_density_violates_the_inequalities() {
    let p = quadratic_problem(16, 0.0, InteractionPotential::gaussian(1.0, 0.5));
    let g = p.grid;
    let mu = GridDensity::probability(g, vec![1.0; g.len()]).unwrap();
    let kkt = kkt_residual(&mu, &p, DEFAULT_TAU).unwrap();
    // Every cell is intermediate, so the residual is Σ h²|v - γ| minimised
    // at the median of v.
    let v = p.v.sample(&g).into_values();
    let direct: f64 = v.iter().map(|x| (x - kkt.gamma).abs()).sum::<f64>() * g.cell_area();
    assert!((kkt.intermediate - direct).abs() < 1e-12);
    assert!(kkt.intermediate > 0.1);
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    assert!(kkt.gamma >= sorted[sorted.len() / 2 - 1] && kkt.gamma <= sorted[sorted.len() / 2]);
}

#[test]
fn infeasible_problem_is_rejected() {
    let params = ModelParams::new(1.0, 1, 0.0).unwrap();
    let model = ModelConfig {
        params,
        v: ExternalPotential::quadratic(),
        w: InteractionPotential::gaussian(1.0, 1.0),
    };
    let g = Grid2D::new(0.5, 8).unwrap();
    assert!(matches!(FlockingProblem::new(&model, g), Err(Error::Infeasible { .. })));
}

#[test]
fn non_convergence_is_reported() {
    let p = quadratic_problem(32, 0.05, InteractionPotential::gaussian(1.0, 0.5));
    let cfg = SolverConfig {
        tol: Some(1e-14),
        max_iter: 2,
        ..SolverConfig::default()
    };
    assert!(matches!(solve_flocking(&p, &cfg), Err(Error::NotConverged { .. })));
}

#[test]
fn sweep_small_couplings_are_solid() {
    let p = quadratic_problem(32, 0.0, InteractionPotential::gaussian(1.0, 0.5));
    let sweep = lambda_sweep(&p, &[0.0, 1e-6], &SolverConfig::default());
    assert!(sweep.rows.iter().all(|r| r.phase == Some(Phase::Solid)));
    assert_eq!(sweep.lambda0_estimate, Some(1e-6));
    let again = lambda_sweep(&p, &[0.0, 1e-6], &SolverConfig::default());
    assert_eq!(sweep, again);
}

#[test]
fn relaxed_cap_energies_are_ordered() {
    let p = quadratic_problem(48, 0.05, InteractionPotential::gaussian(1.0, 0.5));
    let table = solve_perturbed(&p, &[0.0, 0.01, 0.02, 0.04], &SolverConfig::with_tol(1e-9)).unwrap();
    assert!(table.monotone);
    assert!((table.rows[0].energy.unwrap() - table.base_energy).abs() < 1e-12);
    let slopes: Vec<f64> = table.rows.iter().filter_map(|r| r.slope).collect();
    assert_eq!(slopes.len(), 3);
    assert!(slopes.iter().all(|s| *s >= 0.0));
    let c = table.c_hat.unwrap();
    assert!(slopes.iter().all(|s| (s - c).abs() <= 0.5 * c), "{slopes:?} vs {c}");
}

#[test]
fn scaling_both_potentials_scales_the_energy() {
    let p = quadratic_problem(48, 0.05, InteractionPotential::gaussian(1.0, 0.5));
    let mut q = p.clone();
    q.v = p.v.scaled(3.0);
    q.w = p.w.scaled(3.0);
    let cfg = SolverConfig::with_tol(1e-10);
    let a = solve_flocking(&p, &cfg).unwrap();
    let b = solve_flocking(&q, &cfg).unwrap();
    assert!((b.energy - 3.0 * a.energy).abs() <= 1e-8 * (1.0 + b.energy.abs()));
    let diff: f64 = a
        .minimizer
        .values()
        .iter()
        .zip(b.minimizer.values())
        .map(|(x, y)| (x - y).abs() / p.cap())
        .sum::<f64>()
        * p.grid.cell_area();
    let sat = classify_phase(&a.minimizer, p.cap(), DEFAULT_TAU).saturated_area;
    assert!(diff <= 2.0 * interface_allowance(p.grid.spacing(), sat));
}

#[test]
fn negative_coupling_is_labelled_stationary() {
    let p = quadratic_problem(24, -0.05, InteractionPotential::gaussian(1.0, 0.5));
    let rep = solve_flocking(&p, &SolverConfig::default()).unwrap();
    assert_eq!(rep.certificate, Certificate::StationaryPoint);
}


#[test]
fn exchange_refinement_never_raises_the_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = 2.0 * std::f64::consts::PI * 0.25;
    let grid = Grid2D::new(1.5, 3).unwrap();
    let mut improved = 0;
    for _ in 0..20 {
        let values: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let model = ModelConfig {
            params: ModelParams::new(b, 1, -0.1).unwrap(),
            v: ExternalPotential::Tabulated {
                half_width: 1.5,
                n: 3,
                values,
            },
            w: InteractionPotential::gaussian(0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()),
        };
        let p = FlockingProblem::new(&model, grid).unwrap();
        let plain = SolverConfig {
            exchange: 0,
            ..SolverConfig::with_tol(1e-10)
        };
        let a = solve_flocking(&p, &plain).unwrap();
        let r = solve_flocking(&p, &SolverConfig::with_tol(1e-10)).unwrap();
        assert!(r.energy <= a.energy + 1e-15);
        assert_eq!(r.certificate, Certificate::StationaryPoint);
        improved += (r.energy < a.energy - 1e-9) as usize;
    }
    assert!(improved > 0, "no instance where plain FW stalls above the refinement");
}
