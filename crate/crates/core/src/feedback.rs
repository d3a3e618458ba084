//! Greedy feedback from a converged field and closed-loop simulation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::grid::ValueField;
use crate::solver::{rk4_step, Scratch, ZubovSolver};
use crate::system_model::{SafeSet, SystemModel};

/// One-step lookahead on a field, using the solver's own candidate values.
#[derive(Debug, Clone, Copy)]
pub struct Policy<'a> {
    pub solver: &'a ZubovSolver,
    pub field: &'a ValueField,
}

impl<'a> Policy<'a> {
    pub fn new(solver: &'a ZubovSolver, field: &'a ValueField) -> Result<Self> {
        check_dim("field dimension", field.grid().dim(), solver.state_dim())?;
        if !solver.controls.iter().any(|u| u.iter().all(|&v| v == 0.0)) {
            return Err(Error::Input("control set must contain u = 0".into()));
        }
        Ok(Self { solver, field })
    }

    /// Minimizing control sample at `x`; ties go to the smallest index.
    pub fn greedy_control(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = Scratch::new(x.len());
        Ok(self.solver.controls.get(self.greedy_index(x, &mut s)?).to_vec())
    }

    fn greedy_index(&self, x: &[f64], s: &mut Scratch) -> Result<usize> {
        check_dim("state", x.len(), self.solver.state_dim())?;
        if !self.field.grid().contains(x) {
            return Err(Error::Query(format!("state {x:?} is outside the grid box")));
        }
        Ok(self.solver.best_control(self.field, x, s).0)
    }
}

#[derive(Debug, Clone)]
pub enum ControlSource<'a> {
    Greedy(Policy<'a>),
    Constant(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimParams {
    pub horizon: f64,
    pub dt_sim: f64,
    pub delta_conv: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            dt_sim: 0.01,
            delta_conv: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    SafeConverged,
    Unsafe,
    Timeout,
    LeftDomain,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [
        Verdict::SafeConverged,
        Verdict::Unsafe,
        Verdict::Timeout,
        Verdict::LeftDomain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verdict::SafeConverged => "SAFE_CONVERGED",
            Verdict::Unsafe => "UNSAFE",
            Verdict::Timeout => "TIMEOUT",
            Verdict::LeftDomain => "LEFT_DOMAIN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control held over `[t_i, t_{i+1})`; the last sample repeats the
    /// previous one.
    pub controls: Vec<Vec<f64>>,
    /// `h` at each sample.
    pub h: Vec<f64>,
    pub exit_time: f64,
    pub verdict: Verdict,
    pub peak_h: f64,
}

impl TrajectoryRecord {
    /// `t,x1..xn,u1..um,h,w`; `w` is interpolated from `field` when given.
    pub fn to_csv(&self, field: Option<&ValueField>) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut s = String::from("t");
        for i in 1..=n {
            write!(s, ",x{i}").unwrap();
        }
        for j in 1..=m {
            write!(s, ",u{j}").unwrap();
        }
        s.push_str(",h,w\n");
        for i in 0..self.times.len() {
            write!(s, "{:?}", self.times[i]).unwrap();
            for v in self.states[i].iter().chain(&self.controls[i]) {
                write!(s, ",{v:?}").unwrap();
            }
            let w = field.map_or(f64::NAN, |f| f.interpolate(&self.states[i]).unwrap_or(f64::NAN));
            writeln!(s, ",{:?},{w:?}", self.h[i]).unwrap();
        }
        s
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// RK4 with zero-order hold. The box `domain` defaults to the policy grid
/// for greedy control and to all of R^n for a constant control.
pub fn simulate(
    sys: &SystemModel,
    safe: &SafeSet,
    source: &ControlSource,
    x0: &[f64],
    domain: Option<(&[f64], &[f64])>,
    params: SimParams,
) -> Result<TrajectoryRecord> {
    run(sys, safe, source, x0, domain, params, true)
}

fn run(
    sys: &SystemModel,
    safe: &SafeSet,
    source: &ControlSource,
    x0: &[f64],
    domain: Option<(&[f64], &[f64])>,
    p: SimParams,
    keep: bool,
) -> Result<TrajectoryRecord> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    check_dim("initial state", x0.len(), n)?;
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("initial state must be finite".into()));
    }
    if !(p.dt_sim > 0.0 && p.horizon >= 0.0 && p.delta_conv > 0.0) {
        return Err(Error::Input("need dt_sim > 0, horizon >= 0, delta_conv > 0".into()));
    }
    if let ControlSource::Constant(u) = source {
        check_dim("control", u.len(), m)?;
    }
    let domain = domain.or(match source {
        ControlSource::Greedy(pol) => Some((pol.field.grid().lower(), pol.field.grid().upper())),
        ControlSource::Constant(_) => None,
    });
    let inside = |x: &[f64]| {
        domain.is_none_or(|(lo, hi)| x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h))
    };

    let steps = (p.horizon / p.dt_sim).round() as usize;
    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        h: Vec::new(),
        exit_time: f64::INFINITY,
        verdict: Verdict::Timeout,
        peak_h: f64::NEG_INFINITY,
    };
    let mut s = Scratch::new(n);
    let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut x = x0.to_vec();
    let mut u = vec![0.0; m];
    let mut i = 0usize;
    loop {
        let t = i as f64 * p.dt_sim;
        let h = safe.h_at(&x);
        rec.peak_h = rec.peak_h.max(h);
        let stop = if h >= 1.0 {
            rec.exit_time = t;
            Some(Verdict::Unsafe)
        } else if !inside(&x) {
            Some(Verdict::LeftDomain)
        } else if i == steps {
            Some(if norm(&x) < p.delta_conv {
                Verdict::SafeConverged
            } else {
                Verdict::Timeout
            })
        } else {
            None
        };
        if stop.is_none() {
            match source {
                ControlSource::Greedy(pol) => u.copy_from_slice(pol.solver.controls.get(pol.greedy_index(&x, &mut s)?)),
                ControlSource::Constant(c) => u.copy_from_slice(c),
            }
        }
        if keep {
            rec.times.push(t);
            rec.states.push(x.clone());
            rec.controls.push(u.clone());
            rec.h.push(h);
        }
        if let Some(v) = stop {
            rec.verdict = v;
            if !keep {
                rec.times.push(t);
                rec.states.push(x);
            }
            return Ok(rec);
        }
        rk4_step(sys, &x, &u, p.dt_sim, &mut k, &mut tmp, &mut next);
        std::mem::swap(&mut x, &mut next);
        i += 1;
    }
}

/// Where batch trajectories start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSpec {
    /// Every node with `w <= 1 - eps_lvl`.
    Nodes,
    /// `per_node` uniform points in the half-cell around each such node,
    /// kept only if their interpolated `w` is also within the level.
    Jittered { per_node: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub x0: Vec<f64>,
    pub verdict: Verdict,
    pub exit_time: f64,
    pub peak_h: f64,
    pub final_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyReport {
    pub samples: usize,
    pub empty: bool,
    pub counts: Vec<(Verdict, usize)>,
    pub fractions: Vec<(Verdict, f64)>,
    pub fraction_safe_converged: f64,
    /// Whether any trajectory ever sampled `h >= 1`.
    pub reached_unsafe: bool,
    pub worst: Vec<TrajectorySummary>,
    pub eps_lvl: f64,
    pub sim: SimParams,
}

impl SafetyReport {
    pub fn count(&self, v: Verdict) -> usize {
        self.counts.iter().find(|(k, _)| *k == v).map_or(0, |c| c.1)
    }

    pub fn fraction(&self, v: Verdict) -> f64 {
        self.fractions.iter().find(|(k, _)| *k == v).map_or(0.0, |c| c.1)
    }
}

/// Start points for [`batch_verify`].
pub fn batch_samples(field: &ValueField, eps_lvl: f64, spec: SampleSpec) -> Vec<Vec<f64>> {
    let grid = field.grid();
    let level = 1.0 - eps_lvl;
    let nodes = (0..grid.num_nodes()).filter(|&i| field.values()[i] <= level);
    match spec {
        SampleSpec::Nodes => nodes.map(|i| grid.node(i)).collect(),
        SampleSpec::Jittered { per_node, seed } => {
            let mut out = Vec::new();
            for i in nodes {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let node = grid.node(i);
                for _ in 0..per_node {
                    let x: Vec<f64> = node
                        .iter()
                        .zip(grid.spacing())
                        .map(|(c, h)| c + h * rng.gen_range(-0.5..0.5))
                        .collect();
                    if grid.contains(&x) && field.interpolate(&x).is_ok_and(|w| w <= level) {
                        out.push(x);
                    }
                }
            }
            out
        }
    }
}

/// Closed-loop greedy simulations from every start point, in parallel.
pub fn batch_verify(
    policy: &Policy,
    eps_lvl: f64,
    spec: SampleSpec,
    params: SimParams,
    n_worst: usize,
) -> Result<SafetyReport> {
    let solver = policy.solver;
    let starts = batch_samples(policy.field, eps_lvl, spec);
    let source = ControlSource::Greedy(*policy);
    let summaries: Vec<TrajectorySummary> = starts
        .par_iter()
        .map(|x0| {
            run(&solver.system, &solver.safe, &source, x0, None, params, false).map(|r| TrajectorySummary {
                x0: x0.clone(),
                verdict: r.verdict,
                exit_time: r.exit_time,
                peak_h: r.peak_h,
                final_norm: norm(r.states.last().unwrap()),
            })
        })
        .collect::<Result<_>>()?;
    let total = summaries.len();
    let counts: Vec<(Verdict, usize)> = Verdict::ALL
        .iter()
        .map(|&v| (v, summaries.iter().filter(|s| s.verdict == v).count()))
        .collect();
    let fractions: Vec<(Verdict, f64)> = counts
        .iter()
        .map(|&(v, c)| (v, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect();
    let mut worst: Vec<TrajectorySummary> = summaries.clone();
    worst.sort_by(|a, b| b.peak_h.total_cmp(&a.peak_h));
    worst.truncate(n_worst);
    Ok(SafetyReport {
        samples: total,
        empty: total == 0,
        fraction_safe_converged: fractions[0].1,
        counts,
        fractions,
        reached_unsafe: summaries.iter().any(|s| s.peak_h >= 1.0),
        worst,
        eps_lvl,
        sim: params,
    })
}

/// Largest increase of interpolated `w` between consecutive samples, or 0.
pub fn descent_monitor(field: &ValueField, record: &TrajectoryRecord) -> Result<f64> {
    let w: Vec<f64> = record
        .states
        .iter()
        .map(|x| field.interpolate(x))
        .collect::<Result<_>>()?;
    Ok(w.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_model::{load_benchmark, BenchmarkId};

    fn lin1d() -> (SystemModel, SafeSet) {
        let b = load_benchmark(BenchmarkId::Lin1d);
        (b.system, b.safe)
    }

    #[test]
    fn constant_control_verdicts() {
        let (sys, safe) = lin1d();
        let p = SimParams::default();
        let r = simulate(&sys, &safe, &ControlSource::Constant(vec![0.0]), &[0.5], None, p).unwrap();
        assert_eq!(r.verdict, Verdict::SafeConverged);
        assert_eq!(r.exit_time, f64::INFINITY);
        let t = 1.0;
        let i = (t / p.dt_sim) as usize;
        assert!((r.states[i][0] - 0.5 * (-t).exp()).abs() < 1e-10);

        let r = simulate(&sys, &safe, &ControlSource::Constant(vec![3.0]), &[0.5], None, p).unwrap();
        assert_eq!(r.verdict, Verdict::Unsafe);
        // x(t) = 3 - 2.5 e^{-t} hits 1 at t = ln 1.25
        assert!((r.exit_time - 1.25f64.ln()).abs() <= p.dt_sim + 1e-12);
        assert!(r.h[r.h.len() - 2] < 1.0 && *r.h.last().unwrap() >= 1.0);

        let r = simulate(&sys, &safe, &ControlSource::Constant(vec![0.0]), &[1.2], None, p).unwrap();
        assert_eq!((r.verdict, r.exit_time, r.times.len()), (Verdict::Unsafe, 0.0, 1));
    }

    #[test]
    fn left_domain_and_timeout() {
        let (sys, _) = lin1d();
        let safe = SafeSet::unconstrained(1);
        let p = SimParams {
            horizon: 1.0,
            ..SimParams::default()
        };
        let lo = [-1.0];
        let hi = [1.0];
        let r = simulate(
            &sys,
            &safe,
            &ControlSource::Constant(vec![3.0]),
            &[0.5],
            Some((&lo, &hi)),
            p,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::LeftDomain);
        let r = simulate(&sys, &safe, &ControlSource::Constant(vec![0.0]), &[0.5], None, p).unwrap();
        assert_eq!(r.verdict, Verdict::Timeout);
        assert!(simulate(&sys, &safe, &ControlSource::Constant(vec![0.0]), &[f64::NAN], None, p).is_err());
    }

    #[test]
    fn csv_layout() {
        let (sys, safe) = lin1d();
        let p = SimParams {
            horizon: 0.02,
            ..SimParams::default()
        };
        let r = simulate(&sys, &safe, &ControlSource::Constant(vec![0.0]), &[0.5], None, p).unwrap();
        let csv = r.to_csv(None);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,u1,h,w");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0.0,0.5,0.0,0.25,"));
    }
}
