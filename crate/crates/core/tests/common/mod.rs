#![allow(dead_code)]

use std::sync::Arc;

use clbf_core::grid::{ControlSet, Grid, ValueField};
use clbf_core::solver::SolverParams;
use clbf_core::*;

pub const RICCATI_P: f64 = std::f64::consts::SQRT_2 - 1.0;

/// Solver for lin1d with the given cost switch and safe set override.
pub fn lin1d_solver(barrier: bool, unconstrained: bool, samples: usize, dt: f64, tol: f64) -> ZubovSolver {
    let b = load_benchmark(BenchmarkId::Lin1d);
    let safe = if unconstrained {
        SafeSet::unconstrained(1)
    } else {
        b.safe
    };
    ZubovSolver::new(
        b.system,
        safe,
        RunningCost::identity(1, 1, barrier),
        ZubovTransform::new(0.1).unwrap(),
        ControlSet::new(&[4.0], samples).unwrap(),
        SolverParams {
            dt,
            tol,
            max_sweeps: 200_000,
            ..SolverParams::default()
        },
    )
    .unwrap()
}

pub fn solve_on(s: &ZubovSolver, lower: &[f64], upper: &[f64], counts: &[usize]) -> (ValueField, SolveStats) {
    let grid = Arc::new(Grid::build(lower, upper, counts, &s.safe).unwrap());
    s.solve(grid).unwrap()
}

/// Unconstrained field for the same system: no barrier, no unsafe pins.
pub fn unconstrained_twin(s: &ZubovSolver) -> ZubovSolver {
    let mut u = s.clone();
    u.safe = SafeSet::unconstrained(s.state_dim());
    u.cost = u.cost.clone().with_barrier(false);
    u
}

/// Value of `x' = -x + u`, cost `x^2 + u^2`, with `u` restricted to the
/// (relaxed) control lattice `lattice`: `V' = p(x)` where
/// `p x - min_u (u^2 + p u) = x^2`, solved by bisection and integrated
/// with Simpson's rule. The lattice must be symmetric.
pub fn lattice_riccati_value(x: f64, lattice: &[f64]) -> f64 {
    let x = x.abs();
    let ham = |p: f64| lattice.iter().map(|u| u * u + p * u).fold(f64::INFINITY, f64::min);
    let slope = |s: f64| -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let g = |p: f64| p * s - ham(p) - s * s;
        let (mut lo, mut hi) = (0.0, 10.0 * s + 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // g increases with p
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let n = 2000;
    let h = x / n as f64;
    let mut acc = slope(0.0) + slope(x);
    for i in 1..n {
        acc += slope(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Exact feasibility of `a.u < b1, c.u <= b2` over the lattice
/// `u = k / 10`, `|k| <= 400`, for integer data (checked in integers).
pub fn lattice_feasible(a: &[i64], b1: i64, c: &[i64], b2: i64) -> bool {
    let ok = |k: &[i64]| {
        let au: i64 = a.iter().zip(k).map(|(x, y)| x * y).sum();
        let cu: i64 = c.iter().zip(k).map(|(x, y)| x * y).sum();
        au < 10 * b1 && cu <= 10 * b2
    };
    match a.len() {
        1 => (-400..=400).any(|k| ok(&[k])),
        2 => (-400..=400).any(|k1| (-400..=400).any(|k2| ok(&[k1, k2]))),
        _ => unreachable!(),
    }
}

pub fn ray_toward_boundary() -> Vec<Vec<f64>> {
    (2..=20).map(|m| vec![1.0 - 1.0 / m as f64]).collect()
}
