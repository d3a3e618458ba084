//! Semi-Lagrangian value iteration for the transformed value `W = beta(V)`.
//!
//! One Bellman step at a node `x` is
//!
//! ```text
//! W(x) <- min_u [ 1 - exp(-alpha dt eta(x, u)) (1 - W(x+)) ]
//! ```
//!
//! where `x+` is one Euler or RK4 step of `f + g u` over `dt` and `W(x+)`
//! is the multilinear interpolant. A step that leaves the box or lands in
//! `h >= 1` scores 1. Iteration starts from the supersolution (0 at the
//! origin node, 1 elsewhere), so iterates decrease monotonically.
//!
//! Sweeps are Jacobi: every read comes from the previous iterate, which
//! makes the result independent of how nodes are split across threads.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::{hex_digest, ControlSet, Grid, NodeClass, Stencil, ValueField};
use crate::indicator::{RunningCost, ZubovTransform};
use crate::system_model::{serialize_system, SafeSet, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Integrator {
    Euler,
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(format!("unknown integrator `{other}` (euler | rk4)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub dt: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub integrator: Integrator,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            tol: 1e-6,
            max_sweeps: 10_000,
            integrator: Integrator::Euler,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Construction(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Construction(format!("tol = {} must be positive", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quantiles {
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Linearly interpolated quantiles; all zeros for an empty sample.
    pub fn of(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            count: v.len(),
            min: v[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub status: SolveStatus,
    pub sweeps: usize,
    pub final_change: f64,
    pub wall_time: f64,
    /// `|residual|` over interior nodes with a full difference stencil.
    pub residual_summary: Quantiles,
}

/// Problem data shared by the Bellman operator, the residual and the
/// greedy feedback.
#[derive(Debug, Clone)]
pub struct ZubovSolver {
    pub system: SystemModel,
    pub safe: SafeSet,
    pub cost: RunningCost,
    pub transform: ZubovTransform,
    pub controls: ControlSet,
    pub params: SolverParams,
}

/// Reusable buffers for one-step evaluations.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    next: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    stencil: Stencil,
}

impl Scratch {
    pub fn new(n: usize) -> Self {
        Self {
            next: vec![0.0; n],
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            stencil: Stencil::default(),
        }
    }
}

/// `1 - decay (1 - w_next)`; shared by every code path so that all of them
/// agree bit for bit.
#[inline]
fn transformed(decay: f64, w_next: f64) -> f64 {
    1.0 - decay * (1.0 - w_next)
}

/// Precomputed one-step transitions for every (interior node, control).
struct Transitions {
    /// Per interior node: offset into `entries`.
    node_offset: Vec<u32>,
    /// `(decay, corner_start, corner_len)`; `corner_len == 0` marks an exit.
    entries: Vec<(f64, u32, u32)>,
    corners: Vec<(u32, f64)>,
}

impl ZubovSolver {
    pub fn new(
        system: SystemModel,
        safe: SafeSet,
        cost: RunningCost,
        transform: ZubovTransform,
        controls: ControlSet,
        params: SolverParams,
    ) -> Result<Self> {
        let n = system.state_dim();
        let m = system.input_dim();
        check_dim("safe-set dimension", safe.state_dim(), n)?;
        check_dim("cost Q dimension", cost.state_dim(), n)?;
        check_dim("cost R dimension", cost.input_dim(), m)?;
        check_dim("control dimension", controls.input_dim(), m)?;
        params.validate()?;
        Ok(Self {
            system,
            safe,
            cost,
            transform,
            controls,
            params,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// One integrator step of `f + g u` over `dt` into `scratch.next`.
    fn step(&self, x: &[f64], u: &[f64], dt: f64, s: &mut Scratch) {
        let n = x.len();
        match self.params.integrator {
            Integrator::Euler => {
                self.system.velocity(x, u, &mut s.k[0]);
                for i in 0..n {
                    s.next[i] = x[i] + dt * s.k[0][i];
                }
            }
            Integrator::Rk4 => rk4_step(&self.system, x, u, dt, &mut s.k, &mut s.tmp, &mut s.next),
        }
    }

    /// Transformed one-step value of control `u` at state `x` with
    /// `h(x) = h_x`. Returns 1 when the step leaves the box or the safe set.
    pub fn candidate(&self, w: &[f64], grid: &Grid, x: &[f64], h_x: f64, u: &[f64], s: &mut Scratch) -> f64 {
        let decay = self.transform.decay(self.params.dt * self.cost.eta_with_h(h_x, x, u));
        self.step(x, u, self.params.dt, s);
        if self.safe.is_unsafe(&s.next) || !grid.stencil_into(&s.next, &mut s.stencil) {
            return 1.0;
        }
        transformed(decay, s.stencil.apply(w))
    }

    /// Minimizing control index and value at an arbitrary state.
    pub fn best_control(&self, field: &ValueField, x: &[f64], s: &mut Scratch) -> (usize, f64) {
        let h_x = self.safe.h_at(x);
        let mut best = (0, f64::INFINITY);
        for (c, u) in self.controls.iter().enumerate() {
            let v = self.candidate(field.values(), field.grid(), x, h_x, u, s);
            if v < best.1 {
                best = (c, v);
            }
        }
        (best.0, best.1.clamp(0.0, 1.0))
    }

    /// Bellman update at one node, computed from scratch.
    pub fn bellman_update(&self, field: &ValueField, node: usize) -> Result<f64> {
        let grid = field.grid();
        if node >= grid.num_nodes() {
            return Err(Error::Query(format!("node {node} out of range")));
        }
        if grid.class(node) == NodeClass::Unsafe {
            return Err(Error::Query(format!("node {node} is unsafe")));
        }
        let x = grid.node(node);
        let mut s = Scratch::new(x.len());
        Ok(self.best_control(field, &x, &mut s).1)
    }

    fn transitions(&self, grid: &Grid) -> Transitions {
        let n = grid.dim();
        let nodes: Vec<usize> = (0..grid.num_nodes())
            .filter(|&i| grid.class(i) == NodeClass::Interior)
            .collect();
        let per_node: Vec<(Vec<(f64, u32, u32)>, Vec<(u32, f64)>)> = nodes
            .par_iter()
            .map_init(
                || (Scratch::new(n), vec![0.0; n]),
                |(s, x), &node| {
                    grid.node_into(node, x);
                    let h_x = self.safe.h_at(x);
                    let mut entries = Vec::with_capacity(self.controls.len());
                    let mut corners = Vec::new();
                    for u in self.controls.iter() {
                        let decay = self.transform.decay(self.params.dt * self.cost.eta_with_h(h_x, x, u));
                        self.step(x, u, self.params.dt, s);
                        if self.safe.is_unsafe(&s.next) || !grid.stencil_into(&s.next, &mut s.stencil) {
                            entries.push((decay, 0, 0));
                        } else {
                            entries.push((decay, corners.len() as u32, s.stencil.corners.len() as u32));
                            corners.extend(s.stencil.corners.iter().map(|&(i, w)| (i as u32, w)));
                        }
                    }
                    (entries, corners)
                },
            )
            .collect();

        let mut t = Transitions {
            node_offset: vec![u32::MAX; grid.num_nodes()],
            entries: Vec::with_capacity(nodes.len() * self.controls.len()),
            corners: Vec::new(),
        };
        for (&node, (entries, corners)) in nodes.iter().zip(per_node) {
            t.node_offset[node] = t.entries.len() as u32;
            let base = t.corners.len() as u32;
            t.entries
                .extend(entries.into_iter().map(|(d, start, len)| (d, start + base, len)));
            t.corners.extend(corners);
        }
        t
    }

    fn sweep_with(&self, t: &Transitions, grid: &Grid, old: &[f64], new: &mut [f64]) -> f64 {
        let nc = self.controls.len();
        new.par_iter_mut().enumerate().for_each(|(i, out)| {
            if grid.class(i).is_pinned() {
                *out = old[i];
                return;
            }
            let off = t.node_offset[i] as usize;
            let mut best = f64::INFINITY;
            for &(decay, start, len) in &t.entries[off..off + nc] {
                let v = if len == 0 {
                    1.0
                } else {
                    let mut w = 0.0;
                    for &(j, wt) in &t.corners[start as usize..(start + len) as usize] {
                        w += wt * old[j as usize];
                    }
                    transformed(decay, w.clamp(0.0, 1.0))
                };
                if v < best {
                    best = v;
                }
            }
            *out = best.clamp(0.0, 1.0);
        });
        old.iter()
            .zip(new.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// One synchronous sweep over all interior nodes.
    pub fn sweep(&self, field: &ValueField) -> (ValueField, f64) {
        let t = self.transitions(field.grid());
        let mut next = field.clone();
        let change = self.sweep_with(&t, field.grid(), field.values(), next.values_mut());
        next.iterations += 1;
        next.final_change = change;
        (next, change)
    }

    pub fn solve(&self, grid: Arc<Grid>) -> Result<(ValueField, SolveStats)> {
        self.solve_observed(grid, |_, _, _| {})
    }

    /// Like [`ZubovSolver::solve`], calling `observer(sweep, old, new)`
    /// after every sweep.
    pub fn solve_observed(
        &self,
        grid: Arc<Grid>,
        mut observer: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<(ValueField, SolveStats)> {
        check_dim("grid dimension", grid.dim(), self.state_dim())?;
        if self.controls.is_empty() {
            return Err(Error::Input("control set is empty".into()));
        }
        let start = Instant::now();
        let t = self.transitions(&grid);
        let mut field = ValueField::initial(grid.clone(), self.transform.alpha());
        let mut buf = field.values().to_vec();
        let mut change = f64::INFINITY;
        let mut sweeps = 0;
        let mut converged = false;
        while sweeps < self.params.max_sweeps {
            change = self.sweep_with(&t, &grid, field.values(), &mut buf);
            sweeps += 1;
            observer(sweeps, field.values(), &buf);
            std::mem::swap(field.values_mut(), &mut buf);
            if change < self.params.tol {
                converged = true;
                break;
            }
        }
        field.iterations = sweeps;
        field.final_change = change;
        field.converged = converged;
        field.params_hash = self.params_hash(&grid);

        let residuals: Vec<f64> = self
            .residual_nodes(&field)
            .into_par_iter()
            .map(|i| self.residual_unchecked(&field, i).abs())
            .collect();
        let stats = SolveStats {
            status: if converged {
                SolveStatus::Converged
            } else {
                SolveStatus::NotConverged
            },
            sweeps,
            final_change: change,
            wall_time: start.elapsed().as_secs_f64(),
            residual_summary: Quantiles::of(residuals),
        };
        Ok((field, stats))
    }

    /// Interior nodes with a full central-difference stencil.
    pub fn residual_nodes(&self, field: &ValueField) -> Vec<usize> {
        let g = field.grid();
        (0..g.num_nodes())
            .filter(|&i| g.class(i) == NodeClass::Interior && field.has_full_stencil(i))
            .collect()
    }

    /// `min_u [grad W . (f + g u) + (1 - W) alpha eta(x, u)]` with the
    /// numerical gradient; zero for an exact solution.
    pub fn zubov_residual(&self, field: &ValueField, node: usize) -> Result<f64> {
        let g = field.grid();
        if node >= g.num_nodes() {
            return Err(Error::Query(format!("node {node} out of range")));
        }
        if g.class(node) == NodeClass::Unsafe || !field.has_full_stencil(node) {
            return Err(Error::Query(format!("node {node} has no full difference stencil")));
        }
        Ok(self.residual_unchecked(field, node))
    }

    fn residual_unchecked(&self, field: &ValueField, node: usize) -> f64 {
        let x = field.grid().node(node);
        let grad = field.gradient_unchecked(node);
        let w = field.values()[node];
        let h_x = self.safe.h_at(&x);
        let mut v = vec![0.0; x.len()];
        let mut best = f64::INFINITY;
        for u in self.controls.iter() {
            self.system.velocity(&x, u, &mut v);
            let drift: f64 = grad.iter().zip(&v).map(|(a, b)| a * b).sum();
            let r = drift + (1.0 - w) * self.transform.alpha() * self.cost.eta_with_h(h_x, &x, u);
            best = best.min(r);
        }
        best
    }

    /// Canonical text of every parameter that influences the field.
    pub fn params_text(&self, grid: &Grid) -> String {
        format!(
            "{}{}transform.alpha = {:?}\ngrid.lower = {:?}\ngrid.upper = {:?}\ngrid.counts = {:?}\ncontrols.u_max = {:?}\ncontrols.samples = {}\nsolver = {:?}\n",
            serialize_system(&self.system, &self.safe),
            self.cost.to_config(),
            self.transform.alpha(),
            grid.lower(),
            grid.upper(),
            grid.counts(),
            self.controls.u_max(),
            self.controls.samples_per_axis(),
            self.params,
        )
    }

    pub fn params_hash(&self, grid: &Grid) -> String {
        hex_digest(self.params_text(grid).as_bytes())
    }
}

pub(crate) fn rk4_step(
    sys: &SystemModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    k: &mut [Vec<f64>; 4],
    tmp: &mut [f64],
    out: &mut [f64],
) {
    let n = x.len();
    sys.velocity(x, u, &mut k[0]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k[0][i];
    }
    sys.velocity(tmp, u, &mut k[1]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k[1][i];
    }
    sys.velocity(tmp, u, &mut k[2]);
    for i in 0..n {
        tmp[i] = x[i] + dt * k[2][i];
    }
    sys.velocity(tmp, u, &mut k[3]);
    for i in 0..n {
        out[i] = x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

/// `V = -ln(1 - W) / alpha` per node, `+inf` where `W = 1`.
pub fn recover_v(field: &ValueField, transform: &ZubovTransform) -> Vec<f64> {
    field
        .values()
        .iter()
        .map(|&w| transform.beta_inv(w).unwrap_or(f64::INFINITY))
        .collect()
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}
