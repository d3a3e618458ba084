mod common;

use clbf_core::grid::NodeClass;
use clbf_core::solver::{recover_v, with_workers};
use clbf_core::*;
use common::*;

#[test]
fn iteration_is_monotone_and_bounded_on_catalog() {
    for id in BenchmarkId::ALL {
        let b = load_benchmark(id);
        let s = b.solver();
        let grid = b.grid().unwrap();
        let pinned: Vec<usize> = (0..grid.num_nodes()).filter(|&i| grid.class(i).is_pinned()).collect();
        let mut worst_rise = f64::NEG_INFINITY;
        let mut in_range = true;
        let mut pins_kept = true;
        let (_, st) = s
            .solve_observed(grid.clone(), |_, old, new| {
                for (o, n) in old.iter().zip(new) {
                    worst_rise = worst_rise.max(n - o);
                    in_range &= (0.0..=1.0).contains(n);
                }
                pins_kept &= pinned.iter().all(|&i| old[i] == new[i]);
            })
            .unwrap();
        assert_eq!(st.status, SolveStatus::Converged, "{id}");
        assert!(worst_rise <= 0.0, "{id}: rise {worst_rise}");
        assert!(in_range && pins_kept, "{id}");
    }
}

#[test]
fn converged_field_is_a_bellman_fixed_point() {
    for id in BenchmarkId::ALL {
        let b = load_benchmark(id);
        let s = b.solver();
        let (f, _) = s.solve(b.grid().unwrap()).unwrap();
        let g = f.grid();
        for i in 0..g.num_nodes() {
            if g.class(i) == NodeClass::Interior {
                let d = (f.values()[i] - s.bellman_update(&f, i).unwrap()).abs();
                assert!(d <= s.params.tol, "{id} node {i}: {d}");
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_the_field() {
    for id in [BenchmarkId::Lin1d, BenchmarkId::PendulumBox] {
        let b = load_benchmark(id);
        let s = b.solver();
        let one = with_workers(1, || s.solve(b.grid().unwrap()).unwrap().0);
        let four = with_workers(4, || s.solve(b.grid().unwrap()).unwrap().0);
        assert_eq!(one.to_csv(), four.to_csv(), "{id}");
    }
}

#[test]
fn lin1d_field_is_positive_definite() {
    let b = load_benchmark(BenchmarkId::Lin1d);
    let (f, _) = b.solver().solve(b.grid().unwrap()).unwrap();
    let g = f.grid();
    assert_eq!(f.values()[g.origin()], 0.0);
    for (i, &w) in f.values().iter().enumerate() {
        if i != g.origin() {
            assert!(w > 0.0);
        }
    }
}

#[test]
fn lin1d_matches_lattice_restricted_riccati_value() {
    // with only the 41 control samples available, the exact value differs
    // from (sqrt 2 - 1) x^2 near the origin; compare against the value of
    // the lattice-restricted problem instead
    let s = lin1d_solver(false, true, 41, 0.01, 1e-12);
    let (f, _) = solve_on(&s, &[-2.0], &[2.0], &[1001]);
    let lattice: Vec<f64> = s.controls.iter().map(|u| u[0]).collect();
    let mut worst: f64 = 0.0;
    for x in [0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 1.0, -0.25, -0.6, -1.0] {
        let v = s.transform.beta_inv(f.interpolate(&[x]).unwrap()).unwrap();
        let oracle = lattice_riccati_value(x, &lattice);
        worst = worst.max((v - oracle).abs() / oracle);
    }
    assert!(worst <= 0.05, "worst relative error {worst}");
    // far from the origin the lattice is fine enough for the Riccati value
    let v = s.transform.beta_inv(f.interpolate(&[1.0]).unwrap()).unwrap();
    assert!((v - RICCATI_P).abs() / RICCATI_P <= 0.05);
}

#[test]
fn lattice_oracle_reduces_to_riccati_for_dense_controls() {
    let dense: Vec<f64> = (-4000..=4000).map(|k| k as f64 * 1e-3).collect();
    for x in [0.1, 0.5, 1.0] {
        let v = lattice_riccati_value(x, &dense);
        assert!((v - RICCATI_P * x * x).abs() <= 1e-3 * x * x);
    }
    let coarse: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.2).collect();
    assert!((lattice_riccati_value(0.1, &coarse) - 0.005).abs() < 1e-9);
}

#[test]
fn residual_shrinks_under_refinement() {
    let coarse = lin1d_solver(true, false, 41, 0.01, 1e-6);
    let (_, a) = solve_on(&coarse, &[-1.5], &[1.5], &[301]);
    let fine = lin1d_solver(true, false, 41, 0.005, 1e-6);
    let (_, b) = solve_on(&fine, &[-1.5], &[1.5], &[601]);
    let ratio = b.residual_summary.median / a.residual_summary.median;
    assert!(ratio <= 0.75, "median ratio {ratio}");
}

#[test]
fn recovered_v_is_finite_exactly_below_one() {
    let b = load_benchmark(BenchmarkId::Lin1d);
    let s = b.solver();
    let (f, _) = s.solve(b.grid().unwrap()).unwrap();
    for (w, v) in f.values().iter().zip(recover_v(&f, &s.transform)) {
        assert_eq!(*w < 1.0, v.is_finite());
    }
}

#[test]
fn sweep_cap_reports_non_convergence() {
    let mut b = load_benchmark(BenchmarkId::Lin1d);
    b.params.max_sweeps = 1;
    let (f, st) = b.solver().solve(b.grid().unwrap()).unwrap();
    assert_eq!(st.status, SolveStatus::NotConverged);
    assert!(!f.converged);
    assert_eq!(st.sweeps, 1);
}

#[test]
fn field_csv_round_trips() {
    let b = load_benchmark(BenchmarkId::Integrator2dDisk);
    let s = b.solver();
    let (f, _) = s.solve(b.grid().unwrap()).unwrap();
    let text = f.to_csv();
    let back = ValueField::from_csv(&text, &s.safe).unwrap();
    assert_eq!(back.values(), f.values());
    assert_eq!(back.to_csv(), text);
}
