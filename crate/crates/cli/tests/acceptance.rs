//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p clbf-tool --test acceptance`.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use clbf_core::certify::{
    check_compatibility, divergence_test, estimate_domain, Compatibility, CompatibilityQuery, DivergenceThresholds,
};
use clbf_core::feedback::{batch_verify, Policy, SampleSpec, SimParams, Verdict};
use clbf_core::grid::NodeClass;
use clbf_core::solver::{with_workers, SolverParams};
use clbf_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RICCATI_P: f64 = std::f64::consts::SQRT_2 - 1.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn lin1d(barrier: bool, unconstrained: bool, dt: f64) -> ZubovSolver {
    let b = load_benchmark(BenchmarkId::Lin1d);
    ZubovSolver::new(
        b.system,
        if unconstrained {
            SafeSet::unconstrained(1)
        } else {
            b.safe
        },
        RunningCost::identity(1, 1, barrier),
        ZubovTransform::new(0.1).unwrap(),
        ControlSet::new(&[4.0], 41).unwrap(),
        SolverParams {
            dt,
            max_sweeps: 200_000,
            ..SolverParams::default()
        },
    )
    .unwrap()
}

fn solve_on(s: &ZubovSolver, lower: f64, upper: f64, nodes: usize) -> (ValueField, SolveStats) {
    let grid = Arc::new(Grid::build(&[lower], &[upper], &[nodes], &s.safe).unwrap());
    s.solve(grid).unwrap()
}

fn v_hat(s: &ZubovSolver, f: &ValueField, x: f64) -> f64 {
    s.transform.beta_inv(f.interpolate(&[x]).unwrap()).unwrap()
}

/// Value of `x' = -x + u`, cost `x^2 + u^2`, when `u` may only take values
/// in `lattice` (symmetric): `V' = p` with `p x - min_u (u^2 + p u) = x^2`.
fn lattice_value(x: f64, lattice: &[f64]) -> f64 {
    let x = x.abs();
    let ham = |p: f64| lattice.iter().map(|u| u * u + p * u).fold(f64::INFINITY, f64::min);
    let slope = |s: f64| {
        if s == 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, 10.0 * s + 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * s - ham(mid) - s * s < 0.0 {
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

fn riccati_oracle() -> Outcome {
    let s = lin1d(false, true, 0.01);
    let start = Instant::now();
    let (f, st) = with_workers(1, || solve_on(&s, -2.0, 2.0, 1001));
    let secs = start.elapsed().as_secs_f64();
    let lattice: Vec<f64> = s.controls.iter().map(|u| u[0]).collect();
    let mut worst = (0.0, 0.0);
    let mut worst_lattice: f64 = 0.0;
    for i in 0..=18 {
        for sign in [-1.0, 1.0] {
            let x = sign * (0.1 + 0.05 * i as f64);
            let v = v_hat(&s, &f, x);
            let exact = RICCATI_P * x * x;
            let err = (v - exact).abs() / exact;
            if err > worst.0 {
                worst = (err, x);
            }
            let lv = lattice_value(x, &lattice);
            worst_lattice = worst_lattice.max((v - lv).abs() / lv);
        }
    }
    let pass = st.status == SolveStatus::Converged && worst.0 <= 0.05 && secs <= 60.0;
    outcome(
        pass,
        format!(
            "worst relative error {:.4} at x = {} (limit 0.05), {:.1} s single-threaded; \
             against the value restricted to the 41 control samples: {:.4}",
            worst.0, worst.1, secs, worst_lattice
        ),
    )
}

fn domain_recovery() -> Outcome {
    let b = load_benchmark(BenchmarkId::Lin1d);
    let (f, _) = b.solver().solve(b.grid().unwrap()).unwrap();
    let d = estimate_domain(&f, 0.01);
    let g = f.grid();
    let xs: Vec<f64> = (0..g.num_nodes())
        .filter(|&i| d.component[i])
        .map(|i| g.node(i)[0])
        .collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cell = g.spacing()[0];
    let pass = (lo + 1.0).abs() <= cell + 1e-12 && (hi - 1.0).abs() <= cell + 1e-12;
    outcome(pass, format!("estimate spans [{lo:.4}, {hi:.4}], cell {cell:.4}"))
}

fn divergence_dichotomy() -> Outcome {
    let ray: Vec<Vec<f64>> = (2..=20).map(|m| vec![1.0 - 1.0 / m as f64]).collect();
    let th = DivergenceThresholds::default();
    let pair = |barrier: bool| {
        let coarse = lin1d(barrier, false, 0.01);
        let (f1, _) = solve_on(&coarse, -1.5, 1.5, 301);
        let fine = lin1d(barrier, false, 0.005);
        let (f2, _) = solve_on(&fine, -1.5, 1.5, 601);
        divergence_test(&[&f1, &f2], &ray, &coarse.transform, th).unwrap()
    };
    let on = pair(true);
    let off = pair(false);
    let off_fine = off.profiles.last().unwrap();
    let whole_ray = off_fine.last().unwrap() / off_fine[0] - 1.0;
    let pass = on.strictly_increasing
        && on.growth_ratio >= 2.0
        && off.tail_ratio - 1.0 <= 0.25
        && off.refinement_change <= 0.25;
    outcome(
        pass,
        format!(
            "barrier: growth x{:.2} (need >= 2); no barrier: tail variation {:.3}, refinement change {:.3} \
             (limit 0.25 each; first-to-last variation {:.2}, sup {:.3})",
            on.growth_ratio,
            off.tail_ratio - 1.0,
            off.refinement_change,
            whole_ray,
            off.sup
        ),
    )
}

fn monotone_iteration() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for id in BenchmarkId::ALL {
        let b = load_benchmark(id);
        let mut rise = f64::NEG_INFINITY;
        let mut in_range = true;
        let (_, st) = b
            .solver()
            .solve_observed(b.grid().unwrap(), |_, old, new| {
                for (o, n) in old.iter().zip(new) {
                    rise = rise.max(n - o);
                    in_range &= (0.0..=1.0).contains(n);
                }
            })
            .unwrap();
        pass &= rise <= 1e-12 && in_range && st.status == SolveStatus::Converged;
        detail.push(format!("{id}: max rise {rise:.1e} over {} sweeps", st.sweeps));
    }
    outcome(pass, detail.join("; "))
}

fn dpp_consistency() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for id in BenchmarkId::ALL {
        let b = load_benchmark(id);
        let s = b.solver();
        let (f, _) = s.solve(b.grid().unwrap()).unwrap();
        let g = f.grid();
        let worst = (0..g.num_nodes())
            .filter(|&i| g.class(i) == NodeClass::Interior)
            .map(|i| (f.values()[i] - s.bellman_update(&f, i).unwrap()).abs())
            .fold(0.0, f64::max);
        pass &= worst <= 1e-6;
        detail.push(format!("{id}: {worst:.2e}"));
    }
    outcome(pass, detail.join("; "))
}

fn residual_refinement() -> Outcome {
    let (_, a) = solve_on(&lin1d(true, false, 0.01), -1.5, 1.5, 301);
    let (_, b) = solve_on(&lin1d(true, false, 0.005), -1.5, 1.5, 601);
    let ratio = b.residual_summary.median / a.residual_summary.median;
    outcome(
        ratio <= 0.75,
        format!(
            "median residual {:.3e} -> {:.3e}, ratio {ratio:.3} (limit 0.75)",
            a.residual_summary.median, b.residual_summary.median
        ),
    )
}

fn safety_batch() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    let sim = SimParams {
        horizon: 50.0,
        dt_sim: 0.01,
        ..SimParams::default()
    };
    for id in [BenchmarkId::Lin1d, BenchmarkId::Integrator2dDisk] {
        let b = load_benchmark(id);
        let s = b.solver();
        let (f, _) = s.solve(b.grid().unwrap()).unwrap();
        let r = batch_verify(&Policy::new(&s, &f).unwrap(), 0.2, SampleSpec::Nodes, sim, 3).unwrap();
        let unsafe_count = r.count(Verdict::Unsafe);
        pass &= !r.empty && r.fraction_safe_converged >= 0.99 && unsafe_count == 0;
        detail.push(format!(
            "{id}: {}/{} SAFE_CONVERGED, {unsafe_count} UNSAFE",
            r.count(Verdict::SafeConverged),
            r.samples
        ));
    }
    outcome(pass, detail.join("; "))
}

/// Random queries whose half-space data are small integers, so that a
/// lattice of step 1/10 decides feasibility exactly.
fn random_query(rng: &mut ChaCha8Rng) -> CompatibilityQuery {
    let n = rng.gen_range(1..=2usize);
    let m = rng.gen_range(1..=n);
    let small = |rng: &mut ChaCha8Rng| rng.gen_range(-3i32..=3) as f64;
    let zeta: Vec<f64> = if rng.gen_bool(0.1) {
        vec![0.0; n]
    } else {
        (0..n).map(|_| small(rng)).collect()
    };
    let xi: Vec<f64> = match rng.gen_range(0..4) {
        0 => vec![0.0; n],
        1 => {
            let l = small(rng);
            zeta.iter().map(|z| z * l).collect()
        }
        _ => (0..n).map(|_| small(rng)).collect(),
    };
    let f_vec: Vec<f64> = (0..n).map(|_| small(rng)).collect();
    // each input drives a distinct state coordinate with sign +-1
    let mut g_mat = vec![0.0; n * m];
    let first = rng.gen_range(0..n);
    for j in 0..m {
        let row = (first + j) % n;
        g_mat[row * m + j] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    }
    let (alpha0, h_val) = [(1.0, 0.0), (2.0, 0.5), (1.0, -1.0), (4.0, 0.75)][rng.gen_range(0..4)];
    CompatibilityQuery {
        zeta,
        xi,
        f_vec,
        g_mat,
        input_dim: m,
        w_margin: rng.gen_range(1..=3) as f64,
        alpha0,
        h_val,
    }
}

fn velocity(q: &CompatibilityQuery, u: &[f64]) -> Vec<f64> {
    let m = q.input_dim;
    (0..q.f_vec.len())
        .map(|i| q.f_vec[i] + (0..m).map(|j| q.g_mat[i * m + j] * u[j]).sum::<f64>())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Brute force over `u = k / 10`, `|k| <= 400`, in integer arithmetic on
/// ten times the inequalities.
fn lattice_feasible(q: &CompatibilityQuery) -> bool {
    let m = q.input_dim;
    let ks: Vec<i64> = (-400..=400).collect();
    let ok = |k: &[i64]| {
        let u: Vec<f64> = k.iter().map(|&v| v as f64).collect();
        // 10 (f + g u/10) = 10 f + g k, all integers
        let v10: Vec<i64> = (0..q.f_vec.len())
            .map(|i| (10.0 * q.f_vec[i] + (0..m).map(|j| q.g_mat[i * m + j] * u[j]).sum::<f64>()) as i64)
            .collect();
        let zv: i64 = q.zeta.iter().zip(&v10).map(|(z, v)| *z as i64 * v).sum();
        let xv: i64 = q.xi.iter().zip(&v10).map(|(x, v)| *x as i64 * v).sum();
        let rhs2 = (10.0 * q.alpha0 * (1.0 - q.h_val)).round() as i64;
        zv < -10 * q.w_margin as i64 && xv <= rhs2
    };
    match m {
        1 => ks.iter().any(|&k| ok(&[k])),
        _ => ks.iter().any(|&k1| ks.iter().any(|&k2| ok(&[k1, k2]))),
    }
}

fn compatibility_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    let mut feasible = 0;
    let mut bad_witness = 0;
    let total = 1000;
    for _ in 0..total {
        let q = random_query(&mut rng);
        let verdict = check_compatibility(&q).unwrap();
        if verdict.is_feasible() == lattice_feasible(&q) {
            agree += 1;
        }
        if let Compatibility::Feasible { witness } = &verdict {
            feasible += 1;
            let v = velocity(&q, witness);
            let strict = dot(&q.zeta, &v) < -q.w_margin;
            let barrier = dot(&q.xi, &v) <= q.alpha0 * (1.0 - q.h_val);
            if !(strict && barrier) {
                bad_witness += 1;
            }
        }
    }
    outcome(
        agree == total && bad_witness == 0,
        format!("{agree}/{total} verdicts agree ({feasible} feasible), {bad_witness} invalid witnesses"),
    )
}

fn beta_properties() -> Outcome {
    let t = ZubovTransform::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..100.0)).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let increasing = s.windows(2).all(|p| t.beta(p[1]).unwrap() > t.beta(p[0]).unwrap());
    let round_trip = (0..10_000)
        .map(|_| rng.gen_range(0.0..1.0 - 1e-9))
        .map(|w: f64| (t.beta(t.beta_inv(w).unwrap()).unwrap() - w).abs())
        .fold(0.0, f64::max);
    let zero = t.beta(0.0).unwrap();
    outcome(
        increasing && round_trip <= 1e-12 && zero == 0.0,
        format!(
            "increasing on {} points in [0, 100]: {increasing}; round-trip error {round_trip:.1e}; beta(0) = {zero}",
            s.len()
        ),
    )
}

fn worker_determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("clbf-acceptance-{}", std::process::id()));
    let mut fields = Vec::new();
    for w in ["1", "8"] {
        let out = dir.join(format!("workers{w}"));
        let status = Command::new(env!("CARGO_BIN_EXE_clbf"))
            .args(["solve", "--benchmark", "lin1d", "--workers", w, "--out"])
            .arg(&out)
            .output()
            .expect("run clbf");
        if !status.status.success() {
            return outcome(false, format!("clbf solve --workers {w} failed: {:?}", status.status));
        }
        fields.push(std::fs::read(out.join("field.csv")).unwrap());
    }
    let _ = std::fs::remove_dir_all(&dir);
    outcome(
        fields[0] == fields[1],
        format!("field.csv sizes {} and {} bytes", fields[0].len(), fields[1].len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("riccati oracle", riccati_oracle),
        ("domain recovery", domain_recovery),
        ("divergence dichotomy", divergence_dichotomy),
        ("monotone iteration", monotone_iteration),
        ("dpp consistency", dpp_consistency),
        ("residual refinement", residual_refinement),
        ("safety batch verification", safety_batch),
        ("compatibility oracle", compatibility_oracle),
        ("beta properties", beta_properties),
        ("worker determinism", worker_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
