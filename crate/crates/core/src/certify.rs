//! Checks a computed field against the Lyapunov-barrier conditions.
//!
//! Gradients are central differences at grid nodes. Where the field is not
//! differentiable the checks simply report the offending nodes; no attempt
//! is made to compute generalized gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{check_dim, Error, Result};
use crate::grid::{Grid, NodeClass, ValueField};
use crate::indicator::ZubovTransform;
use crate::solver::ZubovSolver;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Inputs of one compatibility test: is there a control `u` with
/// `zeta . (f + g u) < -w_margin` and `xi . (f + g u) <= alpha0 (1 - h)`?
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityQuery {
    pub zeta: Vec<f64>,
    pub xi: Vec<f64>,
    pub f_vec: Vec<f64>,
    /// Row-major `n x m`.
    pub g_mat: Vec<f64>,
    pub input_dim: usize,
    pub w_margin: f64,
    pub alpha0: f64,
    pub h_val: f64,
}

impl CompatibilityQuery {
    /// `(a, b1, c, b2)` of the system `a . u < b1`, `c . u <= b2`.
    pub fn half_spaces(&self) -> Result<(Vec<f64>, f64, Vec<f64>, f64)> {
        let n = self.f_vec.len();
        let m = self.input_dim;
        check_dim("zeta", self.zeta.len(), n)?;
        check_dim("xi", self.xi.len(), n)?;
        check_dim("g", self.g_mat.len(), n * m)?;
        if !(self.h_val < 1.0 && self.w_margin > 0.0 && self.alpha0 > 0.0) {
            return Err(Error::Input("need h < 1, w_margin > 0 and alpha0 > 0".into()));
        }
        let gt = |v: &[f64]| -> Vec<f64> {
            (0..m)
                .map(|j| (0..n).map(|i| self.g_mat[i * m + j] * v[i]).sum())
                .collect()
        };
        let a = gt(&self.zeta);
        let c = gt(&self.xi);
        let b1 = -self.w_margin - dot(&self.zeta, &self.f_vec);
        let b2 = self.alpha0 * (1.0 - self.h_val) - dot(&self.xi, &self.f_vec);
        Ok((a, b1, c, b2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Compatibility {
    Feasible { witness: Vec<f64> },
    Infeasible { reason: String, multiplier: Option<f64> },
}

impl Compatibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Compatibility::Feasible { .. })
    }
}

pub fn check_compatibility(q: &CompatibilityQuery) -> Result<Compatibility> {
    let (a, b1, c, b2) = q.half_spaces()?;
    Ok(solve_half_spaces(&a, b1, &c, b2))
}

fn satisfies(a: &[f64], b1: f64, c: &[f64], b2: f64, u: &[f64]) -> bool {
    dot(a, u) < b1 && dot(c, u) <= b2
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Decides `{u : a . u < b1, c . u <= b2} != {}` by case analysis.
///
/// * `a = 0`: feasible iff `b1 > 0` and the second constraint is
///   satisfiable on its own.
/// * `c = 0`: feasible iff `b2 >= 0`.
/// * `a`, `c` not parallel: always feasible.
/// * `c = lambda a` with `lambda > 0`: always feasible (both bound `a . u`
///   from above).
/// * `c = lambda a` with `lambda < 0`: the constraints read
///   `b2 / lambda <= a . u < b1`, feasible iff `b2 / lambda < b1`.
///
/// Witnesses are verified in floating point before being returned.
pub fn solve_half_spaces(a: &[f64], b1: f64, c: &[f64], b2: f64) -> Compatibility {
    let m = a.len();
    let infeasible = |reason: &str, multiplier| Compatibility::Infeasible {
        reason: reason.to_string(),
        multiplier,
    };
    let aa = norm2(a);
    let cc = norm2(c);
    // Try witnesses built from `make(margin)` with growing margins.
    let search = |make: &dyn Fn(f64) -> Vec<f64>| -> Option<Vec<f64>> {
        let mut margin = 1.0;
        for _ in 0..64 {
            let u = make(margin);
            if u.iter().all(|v| v.is_finite()) && satisfies(a, b1, c, b2, &u) {
                return Some(u);
            }
            margin *= 2.0;
        }
        None
    };

    if aa == 0.0 {
        if !(b1 > 0.0) {
            return infeasible("a = 0 and b1 <= 0: 0 < b1 fails", None);
        }
        if cc == 0.0 {
            return if b2 >= 0.0 {
                Compatibility::Feasible { witness: vec![0.0; m] }
            } else {
                infeasible("c = 0 and b2 < 0: 0 <= b2 fails", None)
            };
        }
        let zero = vec![0.0; m];
        if satisfies(a, b1, c, b2, &zero) {
            return Compatibility::Feasible { witness: zero };
        }
        return search(&|mg| scaled(c, (b2.min(0.0) - mg) / cc)).map_or_else(
            || infeasible("no representable witness", None),
            |u| Compatibility::Feasible { witness: u },
        );
    }

    let zero = vec![0.0; m];
    if satisfies(a, b1, c, b2, &zero) {
        return Compatibility::Feasible { witness: zero };
    }

    if cc == 0.0 {
        if b2 < 0.0 {
            return infeasible("c = 0 and b2 < 0: 0 <= b2 fails", None);
        }
        return search(&|mg| scaled(a, (b1.min(0.0) - mg) / aa)).map_or_else(
            || infeasible("no representable witness", None),
            |u| Compatibility::Feasible { witness: u },
        );
    }

    let lambda = dot(a, c) / aa;
    let c_perp: Vec<f64> = c.iter().zip(a).map(|(ci, ai)| ci - lambda * ai).collect();
    let pp = norm2(&c_perp);
    let parallel = pp.sqrt() <= 1e-12 * cc.sqrt();

    let found = if !parallel {
        // a . u = s, c . u = lambda s + r
        search(&|mg| {
            let s = b1.min(0.0) - mg;
            let r = b2 - lambda * s - mg;
            a.iter()
                .zip(&c_perp)
                .map(|(ai, pi)| s * ai / aa + r * pi / pp)
                .collect()
        })
    } else if lambda > 0.0 {
        search(&|mg| scaled(a, (b1.min(b2 / lambda).min(0.0) - mg) / aa))
    } else {
        let lo = b2 / lambda;
        if !(lo < b1) {
            return infeasible("c = lambda a with lambda < 0 and b2 / lambda >= b1", Some(lambda));
        }
        [0.5, 0.25, 0.75, 0.1, 0.9, 0.01, 0.99]
            .iter()
            .map(|frac| scaled(a, (lo + (b1 - lo) * frac) / aa))
            .find(|u| satisfies(a, b1, c, b2, u))
    };
    match found {
        Some(witness) => Compatibility::Feasible { witness },
        None => infeasible("feasible set thinner than floating-point resolution", None),
    }
}

/// Outcome of one certification check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    pub name: String,
    pub pass_fraction: f64,
    pub total: usize,
    pub passed: usize,
    pub worst_node: Option<usize>,
    pub worst_x: Option<Vec<f64>>,
    pub worst_value: Option<f64>,
    pub params: Value,
}

/// Accumulates per-sample pass/fail records; `worst` is the largest value.
struct Tally {
    total: usize,
    passed: usize,
    worst: Option<(usize, Vec<f64>, f64)>,
}

impl Tally {
    fn new() -> Self {
        Self {
            total: 0,
            passed: 0,
            worst: None,
        }
    }

    fn record(&mut self, node: usize, x: &[f64], value: f64, pass: bool) {
        self.total += 1;
        if pass {
            self.passed += 1;
        }
        if self.worst.as_ref().is_none_or(|w| value > w.2) {
            self.worst = Some((node, x.to_vec(), value));
        }
    }

    fn finish(self, name: &str, params: Value) -> CertReport {
        let (worst_node, worst_x, worst_value) = match self.worst {
            Some((n, x, v)) => (Some(n), Some(x), Some(v)),
            None => (None, None, None),
        };
        CertReport {
            name: name.to_string(),
            pass_fraction: if self.total == 0 {
                1.0
            } else {
                self.passed as f64 / self.total as f64
            },
            total: self.total,
            passed: self.passed,
            worst_node,
            worst_x,
            worst_value,
            params,
        }
    }
}

/// Decrease and level-set conditions.
///
/// `decrease`: at every interior node with `w <= 1 - eps_lvl` (origin
/// excluded), `min_u grad W . (f + g u) < -margin |x|^2`. The recorded value
/// is `min_u grad W . (f + g u) + margin |x|^2`.
///
/// `level_sets`: `w = 1` on every unsafe node and `w < 1` on the estimated
/// domain.
pub fn check_clbf_conditions(
    field: &ValueField,
    solver: &ZubovSolver,
    eps_lvl: f64,
    margin: f64,
) -> Result<(CertReport, CertReport)> {
    if !field.converged {
        return Err(Error::NotConverged);
    }
    let grid = field.grid();
    let w = field.values();
    let mut vel = vec![0.0; grid.dim()];
    let mut dec = Tally::new();
    for i in 0..grid.num_nodes() {
        if grid.class(i) != NodeClass::Interior || w[i] > 1.0 - eps_lvl {
            continue;
        }
        let x = grid.node(i);
        let grad = field.gradient_unchecked(i);
        let best = solver
            .controls
            .iter()
            .map(|u| {
                solver.system.velocity(&x, u, &mut vel);
                dot(&grad, &vel)
            })
            .fold(f64::INFINITY, f64::min);
        let value = best + margin * norm2(&x);
        dec.record(i, &x, value, value < 0.0);
    }
    let params = json!({ "eps_lvl": eps_lvl, "margin": margin });
    let decrease = dec.finish("clbf_decrease", params.clone());

    let domain = estimate_domain(field, eps_lvl);
    let mut lvl = Tally::new();
    for i in 0..grid.num_nodes() {
        let x = grid.node(i);
        if grid.class(i) == NodeClass::Unsafe {
            lvl.record(i, &x, 1.0 - w[i], w[i] == 1.0);
        } else if domain.component[i] {
            lvl.record(i, &x, w[i] - 1.0, w[i] < 1.0);
        }
    }
    Ok((decrease, lvl.finish("clbf_level_sets", params)))
}

/// `w = 0` at the origin node and `w > 0` at every other node with `w < 1`.
pub fn check_positive_definite(field: &ValueField) -> CertReport {
    let grid = field.grid();
    let w = field.values();
    let mut t = Tally::new();
    for i in 0..grid.num_nodes() {
        let x = grid.node(i);
        if i == grid.origin() {
            t.record(i, &x, w[i], w[i] == 0.0);
        } else if w[i] < 1.0 {
            // larger value = worse, so record -w
            t.record(i, &x, -w[i], w[i] > 0.0);
        }
    }
    t.finish("positive_definite", json!({}))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainEstimate {
    pub eps_lvl: f64,
    /// `w < 1 - eps_lvl` (the origin node is always included).
    pub mask: Vec<bool>,
    /// Axis-connected component of `mask` containing the origin node.
    pub component: Vec<bool>,
}

impl DomainEstimate {
    pub fn size(&self) -> usize {
        self.component.iter().filter(|&&b| b).count()
    }

    /// Component size times the cell volume.
    pub fn volume(&self, grid: &Grid) -> f64 {
        self.size() as f64 * grid.spacing().iter().product::<f64>()
    }

    /// Component nodes with at least one axis neighbor outside the component.
    pub fn frontier(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.num_nodes())
            .filter(|&i| {
                self.component[i]
                    && (0..grid.dim()).any(|k| {
                        [-1, 1]
                            .into_iter()
                            .any(|d| grid.neighbor(i, k, d).is_none_or(|j| !self.component[j]))
                    })
            })
            .collect()
    }
}

pub fn estimate_domain(field: &ValueField, eps_lvl: f64) -> DomainEstimate {
    let grid = field.grid();
    let origin = grid.origin();
    let mut mask: Vec<bool> = field.values().iter().map(|&w| w < 1.0 - eps_lvl).collect();
    mask[origin] = true;
    let mut component = vec![false; mask.len()];
    let mut stack = vec![origin];
    component[origin] = true;
    while let Some(i) = stack.pop() {
        for k in 0..grid.dim() {
            for d in [-1, 1] {
                if let Some(j) = grid.neighbor(i, k, d) {
                    if mask[j] && !component[j] {
                        component[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    DomainEstimate {
        eps_lvl,
        mask,
        component,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryTag {
    NearD0Boundary,
    NearSBoundary,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryClassification {
    pub near_d0: usize,
    pub near_s: usize,
    pub unresolved: usize,
    pub tags: Vec<(usize, BoundaryTag)>,
}

impl BoundaryClassification {
    pub fn unresolved_fraction(&self) -> f64 {
        if self.tags.is_empty() {
            0.0
        } else {
            self.unresolved as f64 / self.tags.len() as f64
        }
    }
}

/// Tags each frontier node of the safe domain estimate.
///
/// `NEAR_S_BOUNDARY` when the node or an axis neighbor has
/// `h >= 1 - |grad h| * max spacing`; otherwise `NEAR_D0_BOUNDARY` when the
/// unconstrained field reaches `1 - eps_lvl` at the node or a neighbor;
/// otherwise `UNRESOLVED`.
pub fn classify_boundary(
    field_safe: &ValueField,
    field_unconstrained: &ValueField,
    solver: &ZubovSolver,
    eps_lvl: f64,
) -> Result<BoundaryClassification> {
    let g = field_safe.grid();
    let gu = field_unconstrained.grid();
    if g.lower() != gu.lower() || g.upper() != gu.upper() || g.counts() != gu.counts() {
        return Err(Error::Input("fields live on different grids".into()));
    }
    let domain = estimate_domain(field_safe, eps_lvl);
    let h = solver.safe.h();
    let max_h = g.spacing().iter().copied().fold(0.0, f64::max);
    let wu = field_unconstrained.values();
    let mut out = BoundaryClassification {
        near_d0: 0,
        near_s: 0,
        unresolved: 0,
        tags: Vec::new(),
    };
    for i in domain.frontier(g) {
        let x = g.node(i);
        let slack = norm2(&h.gradient(&x)).sqrt() * max_h;
        let around: Vec<usize> = std::iter::once(i)
            .chain((0..g.dim()).flat_map(|k| [-1, 1].into_iter().filter_map(move |d| g.neighbor(i, k, d))))
            .collect();
        let tag = if around.iter().any(|&j| h.eval(&g.node(j)) >= 1.0 - slack) {
            out.near_s += 1;
            BoundaryTag::NearSBoundary
        } else if around.iter().any(|&j| wu[j] >= 1.0 - eps_lvl) {
            out.near_d0 += 1;
            BoundaryTag::NearD0Boundary
        } else {
            out.unresolved += 1;
            BoundaryTag::Unresolved
        };
        out.tags.push((i, tag));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DivergenceVerdict {
    /// Strictly increasing, large overall growth and still growing in the
    /// second half of the ray.
    Diverging,
    /// Flat second half and stable under refinement.
    Bounded,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceThresholds {
    /// Minimum `V(last) / V(first)` for a diverging profile.
    pub growth: f64,
    /// Tail growth `V(last) / V(mid) - 1` separating the two verdicts.
    pub tail: f64,
    /// Maximum relative change between consecutive refinements for a
    /// bounded profile.
    pub refinement: f64,
}

impl Default for DivergenceThresholds {
    fn default() -> Self {
        Self {
            growth: 2.0,
            tail: 0.25,
            refinement: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    /// Recovered `V` along the ray, one profile per field.
    pub profiles: Vec<Vec<f64>>,
    pub strictly_increasing: bool,
    /// `V(last) / V(first)` on the finest field.
    pub growth_ratio: f64,
    /// `V(last) / V(mid)` on the finest field.
    pub tail_ratio: f64,
    /// Largest relative change of `V` at a ray point between consecutive fields.
    pub refinement_change: f64,
    pub sup: f64,
    pub verdict: DivergenceVerdict,
}

/// Evaluates `V = beta^-1(W)` along `ray` on each field (coarse to fine)
/// and classifies the profile as diverging or bounded.
pub fn divergence_test(
    fields: &[&ValueField],
    ray: &[Vec<f64>],
    transform: &ZubovTransform,
    thresholds: DivergenceThresholds,
) -> Result<DivergenceReport> {
    if fields.is_empty() || ray.is_empty() {
        return Err(Error::Input("need at least one field and one ray point".into()));
    }
    let mut profiles = Vec::with_capacity(fields.len());
    for f in fields {
        let mut p = Vec::with_capacity(ray.len());
        for x in ray {
            let w = f.interpolate(x)?;
            if w >= 1.0 {
                return Err(Error::Input(format!("ray point {x:?} is outside the domain estimate")));
            }
            p.push(transform.beta_inv(w)?);
        }
        profiles.push(p);
    }
    let strictly_increasing = profiles.iter().all(|p| p.windows(2).all(|w| w[1] > w[0]));
    let fine = profiles.last().unwrap();
    let last = *fine.last().unwrap();
    let growth_ratio = last / fine[0];
    let tail_ratio = last / fine[fine.len() / 2];
    let refinement_change = profiles
        .windows(2)
        .flat_map(|pair| {
            pair[0]
                .iter()
                .zip(&pair[1])
                .map(|(a, b)| (b - a).abs() / a.abs().max(f64::MIN_POSITIVE))
        })
        .fold(0.0, f64::max);
    let sup = profiles.iter().flatten().copied().fold(0.0, f64::max);
    let verdict = if ray.len() < 2 {
        DivergenceVerdict::Inconclusive
    } else if strictly_increasing && growth_ratio >= thresholds.growth && tail_ratio - 1.0 > thresholds.tail {
        DivergenceVerdict::Diverging
    } else if tail_ratio - 1.0 <= thresholds.tail && refinement_change <= thresholds.refinement {
        DivergenceVerdict::Bounded
    } else {
        DivergenceVerdict::Inconclusive
    };
    Ok(DivergenceReport {
        profiles,
        strictly_increasing,
        growth_ratio,
        tail_ratio,
        refinement_change,
        sup,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerParams {
    /// Boundary layer `1 - epsilon <= h < 1`.
    pub epsilon: f64,
    /// Linear class-K slope in the barrier inequality.
    pub alpha0: f64,
    /// `w_margin(x) = margin_c |x|^2`.
    pub margin_c: f64,
    /// Jittered points per layer node, in addition to the node itself.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for LayerParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            alpha0: 1.0,
            margin_c: 0.1,
            jitter: 10,
            seed: 0,
        }
    }
}

/// Compatibility of the field's decrease condition with the barrier
/// condition on the boundary layer of the safe set, using the node gradient
/// of `W` as the Lyapunov gradient and the exact gradient of `h`.
/// Only nodes of the domain estimate with a full difference stencil are
/// sampled; infeasible points are reported, nothing is concluded from them.
pub fn check_compatibility_layer(
    field: &ValueField,
    solver: &ZubovSolver,
    eps_lvl: f64,
    p: LayerParams,
) -> Result<CertReport> {
    let grid = field.grid();
    let domain = estimate_domain(field, eps_lvl);
    let h = solver.safe.h();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut t = Tally::new();
    for i in 0..grid.num_nodes() {
        if grid.class(i) != NodeClass::Interior || !domain.component[i] || !field.has_full_stencil(i) {
            continue;
        }
        let node = grid.node(i);
        let zeta = field.gradient_unchecked(i);
        let mut points = vec![node.clone()];
        for _ in 0..p.jitter {
            points.push(
                node.iter()
                    .zip(grid.spacing())
                    .map(|(x, s)| x + s * rng.gen_range(-0.5..0.5))
                    .collect(),
            );
        }
        for x in points {
            let h_val = h.eval(&x);
            if !(1.0 - p.epsilon <= h_val && h_val < 1.0) {
                continue;
            }
            let (f_vec, g_mat) = solver.system.eval_dynamics(&x)?;
            let q = CompatibilityQuery {
                zeta: zeta.clone(),
                xi: h.gradient(&x),
                f_vec,
                g_mat,
                input_dim: solver.system.input_dim(),
                w_margin: (p.margin_c * norm2(&x)).max(f64::MIN_POSITIVE),
                alpha0: p.alpha0,
                h_val,
            };
            let ok = check_compatibility(&q)?.is_feasible();
            t.record(i, &x, if ok { 0.0 } else { 1.0 }, ok);
        }
    }
    Ok(t.finish(
        "compatibility_layer",
        json!({
            "epsilon": p.epsilon,
            "alpha0": p.alpha0,
            "margin_c": p.margin_c,
            "jitter": p.jitter,
            "seed": p.seed,
            "eps_lvl": eps_lvl,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::system_model::SafeSet;
    use std::sync::Arc;

    #[test]
    fn compatibility_examples() {
        let r = solve_half_spaces(&[1.0, 0.0], 1.0, &[0.0, 1.0], 0.0);
        assert_eq!(
            r,
            Compatibility::Feasible {
                witness: vec![0.0, 0.0]
            }
        );
        let r = solve_half_spaces(&[1.0, 0.0], -1.0, &[-1.0, 0.0], 0.0);
        assert!(!r.is_feasible());
        let r = solve_half_spaces(&[0.0, 0.0], 0.5, &[0.0, 0.0], 0.0);
        assert_eq!(
            r,
            Compatibility::Feasible {
                witness: vec![0.0, 0.0]
            }
        );
    }

    #[test]
    fn compatibility_cases() {
        // a = 0, b1 <= 0
        assert!(!solve_half_spaces(&[0.0], 0.0, &[1.0], 1.0).is_feasible());
        // c = 0, b2 < 0
        assert!(!solve_half_spaces(&[1.0], 1.0, &[0.0], -1.0).is_feasible());
        // non-parallel, origin infeasible
        let Compatibility::Feasible { witness } = solve_half_spaces(&[1.0, 1.0], -3.0, &[1.0, -1.0], -5.0) else {
            panic!()
        };
        assert!(satisfies(&[1.0, 1.0], -3.0, &[1.0, -1.0], -5.0, &witness));
        // parallel, same direction
        assert!(solve_half_spaces(&[2.0], -1.0, &[4.0], -10.0).is_feasible());
        // antiparallel thin slab: -1 <= u < -0.5
        let Compatibility::Feasible { witness } = solve_half_spaces(&[1.0], -0.5, &[-1.0], 1.0) else {
            panic!()
        };
        assert!(witness[0] >= -1.0 && witness[0] < -0.5);
        // antiparallel closed-open boundary: u >= 1 and u < 1
        assert!(!solve_half_spaces(&[1.0], 1.0, &[-1.0], -1.0).is_feasible());
    }

    #[test]
    fn query_builds_half_spaces() {
        let q = CompatibilityQuery {
            zeta: vec![1.0],
            xi: vec![2.0],
            f_vec: vec![-0.5],
            g_mat: vec![1.0],
            input_dim: 1,
            w_margin: 0.1,
            alpha0: 1.0,
            h_val: 0.9,
        };
        let (a, b1, c, b2) = q.half_spaces().unwrap();
        assert_eq!(a, vec![1.0]);
        assert!((b1 - 0.4).abs() < 1e-15);
        assert_eq!(c, vec![2.0]);
        assert!((b2 - 1.1).abs() < 1e-12);
        assert!(check_compatibility(&q).unwrap().is_feasible());
        let bad = CompatibilityQuery {
            g_mat: vec![1.0, 0.0],
            ..q.clone()
        };
        assert!(check_compatibility(&bad).is_err());
        let bad = CompatibilityQuery { h_val: 1.0, ..q };
        assert!(check_compatibility(&bad).is_err());
    }

    fn field_1d(values: Vec<f64>) -> ValueField {
        let n = values.len();
        let g = Arc::new(Grid::build(&[-1.0], &[1.0], &[n], &SafeSet::unconstrained(1)).unwrap());
        ValueField::from_raw(g, values, 0.1)
    }

    #[test]
    fn positive_definiteness() {
        let f = field_1d(vec![1.0, 0.5, 0.0, 0.5, 1.0]);
        assert_eq!(check_positive_definite(&f).pass_fraction, 1.0);
        let f = field_1d(vec![1.0, 0.0, 0.0, 0.5, 1.0]);
        let r = check_positive_definite(&f);
        assert!(r.pass_fraction < 1.0);
        assert_eq!(r.worst_node, Some(1));
        let f = field_1d(vec![1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(check_positive_definite(&f).pass_fraction, 1.0);
    }

    #[test]
    fn domain_estimates() {
        let f = field_1d(vec![1.0, 0.5, 0.2, 0.0, 0.3, 1.0, 0.1]);
        let d = estimate_domain(&f, 0.01);
        assert_eq!(d.component, vec![false, true, true, true, true, false, false]);
        assert!(d.mask[6]);
        assert_eq!(d.frontier(f.grid()), vec![1, 4]);
        let d = estimate_domain(&f, 1.0);
        assert_eq!(d.size(), 1);
        let f = field_1d(vec![1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(estimate_domain(&f, 0.01).size(), 1);
    }

    #[test]
    fn divergence_degenerate_and_errors() {
        let f = field_1d(vec![1.0, 0.5, 0.0, 0.5, 1.0]);
        let t = ZubovTransform::new(0.1).unwrap();
        let r = divergence_test(&[&f], &[vec![0.2]], &t, DivergenceThresholds::default()).unwrap();
        assert_eq!(r.verdict, DivergenceVerdict::Inconclusive);
        assert!(r.strictly_increasing);
        assert!(divergence_test(&[&f], &[vec![0.2], vec![1.0]], &t, DivergenceThresholds::default()).is_err());
    }
}
