mod common;

use clbf_core::feedback::*;
use clbf_core::grid::ControlSet;
use clbf_core::solver::with_workers;
use clbf_core::*;
use common::*;
use proptest::prelude::*;

fn lin1d() -> (ZubovSolver, ValueField) {
    let b = load_benchmark(BenchmarkId::Lin1d);
    let s = b.solver();
    let (f, _) = s.solve(b.grid().unwrap()).unwrap();
    (s, f)
}

#[test]
fn greedy_control_examples() {
    let (s, f) = lin1d();
    let p = Policy::new(&s, &f).unwrap();
    assert_eq!(p.greedy_control(&[0.0]).unwrap(), vec![0.0]);
    assert!(p.greedy_control(&[0.5]).unwrap()[0] <= 0.0);
    // every candidate from an unsafe state scores 1
    assert_eq!(p.greedy_control(&[1.2]).unwrap(), s.controls.get(0).to_vec());
    assert!(matches!(p.greedy_control(&[1.6]), Err(Error::Query(_))));
}

#[test]
fn control_sets_always_contain_zero() {
    assert!(ControlSet::new(&[4.0], 40).is_err());
    for spa in [1, 3, 41] {
        let cs = ControlSet::new(&[4.0, 1.0], spa).unwrap();
        assert!(cs.iter().any(|u| u.iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn simulation_examples() {
    let b = load_benchmark(BenchmarkId::Lin1d);
    let p = SimParams::default();
    let zero = ControlSource::Constant(vec![0.0]);
    let r = simulate(&b.system, &b.safe, &zero, &[0.5], None, p).unwrap();
    assert_eq!(r.verdict, Verdict::SafeConverged);
    for (t, x) in r.times.iter().zip(&r.states).step_by(250) {
        assert!((x[0] - 0.5 * (-t).exp()).abs() <= 1e-9);
    }
    let r = simulate(&b.system, &b.safe, &zero, &[1.0], None, p).unwrap();
    assert_eq!((r.verdict, r.exit_time), (Verdict::Unsafe, 0.0));
    let r = simulate(&b.system, &b.safe, &ControlSource::Constant(vec![3.0]), &[0.5], None, p).unwrap();
    assert_eq!(r.verdict, Verdict::Unsafe);
}

#[test]
fn greedy_closed_loop_descends() {
    let (s, f) = lin1d();
    let p = Policy::new(&s, &f).unwrap();
    let r = simulate(
        &s.system,
        &s.safe,
        &ControlSource::Greedy(p),
        &[0.5],
        None,
        SimParams::default(),
    )
    .unwrap();
    assert_eq!(r.verdict, Verdict::SafeConverged);
    assert!(descent_monitor(&f, &r).unwrap() <= 0.02);

    let still = simulate(
        &s.system,
        &s.safe,
        &ControlSource::Greedy(p),
        &[0.0],
        None,
        SimParams::default(),
    )
    .unwrap();
    assert_eq!(descent_monitor(&f, &still).unwrap(), 0.0);

    let bad = simulate(
        &s.system,
        &s.safe,
        &ControlSource::Constant(vec![3.0]),
        &[0.5],
        None,
        SimParams::default(),
    )
    .unwrap();
    let before = f.interpolate(&bad.states[bad.states.len() - 2]).unwrap();
    assert_eq!(f.interpolate(bad.states.last().unwrap()).unwrap(), 1.0);
    assert_eq!(descent_monitor(&f, &bad).unwrap(), 1.0 - before);
}

#[test]
fn lin1d_batch_is_all_safe() {
    let (s, f) = lin1d();
    let p = Policy::new(&s, &f).unwrap();
    let r = batch_verify(&p, 0.2, SampleSpec::Nodes, SimParams::default(), 5).unwrap();
    assert!(!r.empty);
    assert_eq!(r.fraction(Verdict::SafeConverged), 1.0);
    assert!(!r.reached_unsafe);
    let total: f64 = r.fractions.iter().map(|f| f.1).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(r.worst.len(), 5);

    let empty = batch_verify(&p, 1.5, SampleSpec::Nodes, SimParams::default(), 5).unwrap();
    assert!(empty.empty);
    assert_eq!(empty.samples, 0);
}

#[test]
fn jittered_batch_is_deterministic() {
    let (s, f) = lin1d();
    let p = Policy::new(&s, &f).unwrap();
    let spec = SampleSpec::Jittered { per_node: 2, seed: 7 };
    let short = SimParams {
        horizon: 10.0,
        ..SimParams::default()
    };
    let a = with_workers(1, || batch_verify(&p, 0.2, spec, short, 3).unwrap());
    let b = with_workers(3, || batch_verify(&p, 0.2, spec, short, 3).unwrap());
    assert_eq!(a, b);
    assert!(a.samples > 0);
    let other = batch_samples(&f, 0.2, SampleSpec::Jittered { per_node: 2, seed: 8 });
    assert_ne!(other, batch_samples(&f, 0.2, spec));
}

fn lin1d_no_barrier_fine() -> (ZubovSolver, ValueField) {
    // 401 samples: with the 41-sample lattice the optimal |u| ~ 0.41 |x|
    // rounds to 0 below |x| ~ 0.2
    let mut b = load_benchmark(BenchmarkId::Lin1d);
    b.cost = b.cost.with_barrier(false);
    b.controls = ControlSet::new(&[4.0], 401).unwrap();
    let s = b.solver();
    let (f, _) = s.solve(b.grid().unwrap()).unwrap();
    (s, f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn greedy_sign_matches_riccati(x in prop_oneof![-0.95..-0.1f64, 0.1..0.95f64]) {
        thread_local! {
            static SETUP: (ZubovSolver, ValueField) = lin1d_no_barrier_fine();
        }
        SETUP.with(|(s, f)| {
            let u = Policy::new(s, f).unwrap().greedy_control(&[x]).unwrap()[0];
            let riccati = -RICCATI_P * x;
            prop_assert!(u != 0.0 && u.signum() == riccati.signum(), "x {} u {}", x, u);
            Ok(())
        })?;
    }

    #[test]
    fn verdicts_are_consistent(x0 in -1.4..1.4f64, u in -4.0..4.0f64) {
        let b = load_benchmark(BenchmarkId::Lin1d);
        let p = SimParams { horizon: 5.0, ..SimParams::default() };
        let r = simulate(&b.system, &b.safe, &ControlSource::Constant(vec![u]), &[x0], None, p).unwrap();
        prop_assert_eq!(r.verdict == Verdict::Unsafe, r.exit_time.is_finite());
        if r.verdict == Verdict::Unsafe {
            let first = r.h.iter().position(|&h| h >= 1.0).unwrap();
            prop_assert_eq!(r.times[first], r.exit_time);
            prop_assert_eq!(first, r.h.len() - 1);
        }
        if r.verdict == Verdict::SafeConverged {
            prop_assert!(r.h.iter().all(|&h| h < 1.0));
            prop_assert!(r.states.last().unwrap()[0].abs() < p.delta_conv);
        }
    }
}

#[test]
fn greedy_control_is_thread_independent() {
    let (s, f) = lin1d();
    let p = Policy::new(&s, &f).unwrap();
    let xs: Vec<f64> = (0..50).map(|i| -1.4 + i as f64 * 0.057).collect();
    let run = || xs.iter().map(|&x| p.greedy_control(&[x]).unwrap()).collect::<Vec<_>>();
    let a = with_workers(1, run);
    let b = with_workers(4, run);
    assert_eq!(a, b);
}

#[test]
fn trajectory_csv_carries_w() {
    let (s, f) = lin1d();
    let p = Policy::new(&s, &f).unwrap();
    let r = simulate(
        &s.system,
        &s.safe,
        &ControlSource::Greedy(p),
        &[0.5],
        None,
        SimParams {
            horizon: 0.05,
            ..SimParams::default()
        },
    )
    .unwrap();
    let csv = r.to_csv(Some(&f));
    let first = csv.lines().nth(1).unwrap();
    let w: f64 = first.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(w, f.interpolate(&[0.5]).unwrap());
    assert_eq!(csv.lines().count(), r.times.len() + 1);
}
