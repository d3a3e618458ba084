//! Rectilinear grids over a box, node classification, multilinear
//! interpolation, finite-difference gradients and control lattices.
//!
//! Node storage is row-major: the last axis varies fastest.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::system_model::SafeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeClass {
    Interior,
    Unsafe,
    BoxBoundary,
    Origin,
}

impl NodeClass {
    /// Nodes whose value is fixed by the boundary conditions.
    pub fn is_pinned(self) -> bool {
        !matches!(self, NodeClass::Interior)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    classes: Vec<NodeClass>,
    origin: usize,
}

/// Corner indices and weights of the cell containing a point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stencil {
    pub corners: Vec<(usize, f64)>,
    splits: Vec<(usize, f64)>,
}

impl Stencil {
    /// Weighted sum of node values, clamped to `[0, 1]`.
    #[inline]
    pub fn apply(&self, w: &[f64]) -> f64 {
        let mut v = 0.0;
        for &(i, wt) in &self.corners {
            v += wt * w[i];
        }
        v.clamp(0.0, 1.0)
    }
}

impl Grid {
    pub fn build(lower: &[f64], upper: &[f64], counts: &[usize], safe: &SafeSet) -> Result<Self> {
        let n = lower.len();
        if n == 0 {
            return Err(Error::Construction("grid needs at least one axis".into()));
        }
        check_dim("upper", upper.len(), n)?;
        check_dim("counts", counts.len(), n)?;
        check_dim("safe-set dimension", safe.state_dim(), n)?;
        for k in 0..n {
            if !(lower[k].is_finite() && upper[k].is_finite() && lower[k] < upper[k]) {
                return Err(Error::Construction(format!(
                    "axis {k}: need finite lower < upper, got [{}, {}]",
                    lower[k], upper[k]
                )));
            }
            if !(lower[k] < 0.0 && 0.0 < upper[k]) {
                return Err(Error::Construction(format!(
                    "axis {k}: box [{}, {}] does not strictly contain the origin",
                    lower[k], upper[k]
                )));
            }
            if counts[k] < 3 {
                return Err(Error::Construction(format!("axis {k}: need at least 3 nodes")));
            }
        }
        let spacing: Vec<f64> = (0..n).map(|k| (upper[k] - lower[k]) / (counts[k] - 1) as f64).collect();
        let mut strides = vec![1; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let mut grid = Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            counts: counts.to_vec(),
            spacing,
            strides,
            classes: Vec::new(),
            origin: 0,
        };

        // Nearest node to 0, axis by axis; ties go to the lower index.
        let origin_multi: Vec<usize> = (0..n)
            .map(|k| {
                let p = -grid.lower[k] / grid.spacing[k];
                let lo = p.floor() as usize;
                let lo = lo.min(grid.counts[k] - 1);
                let hi = (lo + 1).min(grid.counts[k] - 1);
                if (grid.coord(k, hi)).abs() < grid.coord(k, lo).abs() {
                    hi
                } else {
                    lo
                }
            })
            .collect();
        grid.origin = grid.linear(&origin_multi);

        let total = grid.num_nodes();
        let mut x = vec![0.0; n];
        let mut classes = Vec::with_capacity(total);
        for idx in 0..total {
            grid.node_into(idx, &mut x);
            let class = if idx == grid.origin {
                if safe.is_unsafe(&x) {
                    return Err(Error::Construction(format!("origin node {x:?} is unsafe (h >= 1)")));
                }
                NodeClass::Origin
            } else if safe.is_unsafe(&x) {
                NodeClass::Unsafe
            } else if grid.on_box_boundary(idx) {
                NodeClass::BoxBoundary
            } else {
                NodeClass::Interior
            };
            classes.push(class);
        }
        grid.classes = classes;
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        self.classes[idx]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    /// Coordinate of node `i` along axis `k`, computed so that nodes land
    /// exactly on representable box fractions.
    #[inline]
    pub fn coord(&self, k: usize, i: usize) -> f64 {
        let c = self.counts[k] - 1;
        if i == c {
            return self.upper[k];
        }
        self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / c as f64
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in 0..self.dim() {
            out[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
        out
    }

    pub fn linear(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    #[inline]
    fn axis_index(&self, idx: usize, k: usize) -> usize {
        (idx / self.strides[k]) % self.counts[k]
    }

    pub fn node_into(&self, idx: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.coord(k, self.axis_index(idx, k));
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(idx, &mut x);
        x
    }

    pub fn on_box_boundary(&self, idx: usize) -> bool {
        (0..self.dim()).any(|k| {
            let i = self.axis_index(idx, k);
            i == 0 || i + 1 == self.counts[k]
        })
    }

    /// Neighbor along axis `k` in direction `dir` (-1 or +1), if inside the box.
    pub fn neighbor(&self, idx: usize, k: usize, dir: i8) -> Option<usize> {
        let i = self.axis_index(idx, k);
        match dir {
            -1 if i > 0 => Some(idx - self.strides[k]),
            1 if i + 1 < self.counts[k] => Some(idx + self.strides[k]),
            _ => None,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// Fills `st` with the multilinear stencil of `x`. Returns `false` when
    /// `x` is outside the box.
    pub fn stencil_into(&self, x: &[f64], st: &mut Stencil) -> bool {
        st.corners.clear();
        if !self.contains(x) {
            return false;
        }
        let n = self.dim();
        let mut base = 0;
        // (stride, fraction) per axis where the point is strictly inside a cell
        st.splits.clear();
        for k in 0..n {
            let c = self.counts[k] - 1;
            let p = (x[k] - self.lower[k]) / (self.upper[k] - self.lower[k]) * c as f64;
            let mut i = (p.floor() as usize).min(c);
            let mut t = p - i as f64;
            if t < 1e-12 {
                t = 0.0;
            } else if t > 1.0 - 1e-12 {
                i += 1;
                t = 0.0;
            }
            if i >= c {
                i = c;
                t = 0.0;
            }
            base += i * self.strides[k];
            if t > 0.0 {
                st.splits.push((self.strides[k], t));
            }
        }
        let splits = &st.splits;
        for mask in 0..(1usize << splits.len()) {
            let mut idx = base;
            let mut wt = 1.0;
            for (b, &(stride, t)) in splits.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    idx += stride;
                    wt *= t;
                } else {
                    wt *= 1.0 - t;
                }
            }
            st.corners.push((idx, wt));
        }
        true
    }

    /// Digest of the geometry plus the transform rate, as written in the
    /// field CSV header.
    pub fn geometry_hash(&self, alpha: f64) -> String {
        hex_digest(field_header(self, alpha).as_bytes())
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn field_header(grid: &Grid, alpha: f64) -> String {
    format!(
        "# n={} counts={} lower={} upper={} alpha={:?}",
        grid.dim(),
        join(&grid.counts),
        join(&grid.lower),
        join(&grid.upper),
        alpha
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    u_max: Vec<f64>,
    samples_per_axis: usize,
    samples: Vec<f64>,
}

impl ControlSet {
    pub fn new(u_max: &[f64], samples_per_axis: usize) -> Result<Self> {
        if u_max.is_empty() || u_max.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(Error::Construction("control bounds must be positive".into()));
        }
        if samples_per_axis == 0 || samples_per_axis % 2 == 0 {
            return Err(Error::Construction(format!(
                "samples_per_axis = {samples_per_axis} must be odd so that 0 is a sample"
            )));
        }
        let m = u_max.len();
        let s = samples_per_axis;
        let total = s.pow(m as u32);
        let half = (s - 1) as f64;
        let mut samples = Vec::with_capacity(total * m);
        for flat in 0..total {
            let mut rem = flat;
            let mut digits = vec![0; m];
            for j in (0..m).rev() {
                digits[j] = rem % s;
                rem /= s;
            }
            for j in 0..m {
                // integer numerator keeps the lattice exactly symmetric
                let v = if half == 0.0 {
                    0.0
                } else {
                    u_max[j] * (2 * digits[j] as i64 - (s as i64 - 1)) as f64 / half
                };
                samples.push(v);
            }
        }
        Ok(Self {
            u_max: u_max.to_vec(),
            samples_per_axis,
            samples,
        })
    }

    /// The set `{0}` only.
    pub fn zero(m: usize) -> Self {
        Self::new(&vec![1.0; m], 1).unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.u_max.len()
    }

    pub fn u_max(&self) -> &[f64] {
        &self.u_max
    }

    pub fn samples_per_axis(&self) -> usize {
        self.samples_per_axis
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.input_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        let m = self.input_dim();
        &self.samples[i * m..(i + 1) * m]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks(self.input_dim())
    }

    /// Lexicographic by axis (first axis slowest).
    pub fn control_samples(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Transformed value `W` on every grid node, plus solve metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: Arc<Grid>,
    w: Vec<f64>,
    alpha: f64,
    pub iterations: usize,
    pub final_change: f64,
    pub converged: bool,
    pub params_hash: String,
}

impl ValueField {
    /// Supersolution start: 0 at the origin node, 1 elsewhere.
    pub fn initial(grid: Arc<Grid>, alpha: f64) -> Self {
        let mut w = vec![1.0; grid.num_nodes()];
        w[grid.origin()] = 0.0;
        Self {
            grid,
            w,
            alpha,
            iterations: 0,
            final_change: f64::INFINITY,
            converged: false,
            params_hash: String::new(),
        }
    }

    /// Wraps explicit node values. Pinned nodes must already satisfy the
    /// boundary conditions and all values must lie in `[0, 1]`.
    pub fn from_values(grid: Arc<Grid>, w: Vec<f64>, alpha: f64) -> Result<Self> {
        check_dim("field values", w.len(), grid.num_nodes())?;
        for (i, &v) in w.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("node {i}: w = {v} outside [0, 1]")));
            }
            let want = match grid.class(i) {
                NodeClass::Origin => Some(0.0),
                NodeClass::Unsafe | NodeClass::BoxBoundary => Some(1.0),
                NodeClass::Interior => None,
            };
            if want.is_some_and(|t| t != v) {
                return Err(Error::Input(format!("node {i} ({:?}) has w = {v}", grid.class(i))));
            }
        }
        Ok(Self {
            grid,
            w,
            alpha,
            iterations: 0,
            final_change: 0.0,
            converged: true,
            params_hash: String::new(),
        })
    }

    /// Node values without the pinning checks. Used by tests and oracles
    /// that sample arbitrary functions onto a grid.
    pub fn from_raw(grid: Arc<Grid>, w: Vec<f64>, alpha: f64) -> Self {
        assert_eq!(w.len(), grid.num_nodes());
        Self {
            grid,
            w,
            alpha,
            iterations: 0,
            final_change: 0.0,
            converged: true,
            params_hash: String::new(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn values_mut(&mut self) -> &mut Vec<f64> {
        &mut self.w
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Multilinear interpolation; 1 outside the box.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        check_dim("query", x.len(), self.grid.dim())?;
        let mut st = Stencil::default();
        if !self.grid.stencil_into(x, &mut st) {
            return Ok(1.0);
        }
        let (lo, hi) = st
            .corners
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(i, _)| {
                (lo.min(self.w[i]), hi.max(self.w[i]))
            });
        Ok(st.apply(&self.w).clamp(lo, hi))
    }

    /// Central differences, one-sided along axes where a neighbor is
    /// missing.
    pub fn gradient(&self, node: usize) -> Result<Vec<f64>> {
        if node >= self.w.len() {
            return Err(Error::Query(format!("node {node} out of range")));
        }
        if self.grid.class(node) == NodeClass::Unsafe {
            return Err(Error::Query(format!("node {node} is unsafe")));
        }
        Ok(self.gradient_unchecked(node))
    }

    pub(crate) fn gradient_unchecked(&self, node: usize) -> Vec<f64> {
        let g = &self.grid;
        (0..g.dim())
            .map(|k| {
                let h = g.spacing[k];
                match (g.neighbor(node, k, -1), g.neighbor(node, k, 1)) {
                    (Some(a), Some(b)) => (self.w[b] - self.w[a]) / (2.0 * h),
                    (None, Some(b)) => (self.w[b] - self.w[node]) / h,
                    (Some(a), None) => (self.w[node] - self.w[a]) / h,
                    (None, None) => 0.0,
                }
            })
            .collect()
    }

    pub fn has_full_stencil(&self, node: usize) -> bool {
        (0..self.grid.dim())
            .all(|k| self.grid.neighbor(node, k, -1).is_some() && self.grid.neighbor(node, k, 1).is_some())
    }

    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = field_header(g, self.alpha);
        out.push('\n');
        for idx in 0..g.num_nodes() {
            for i in g.multi_index(idx) {
                let _ = write!(out, "{i},");
            }
            let _ = writeln!(out, "{}", self.w[idx]);
        }
        out
    }

    /// Reads a field written by [`ValueField::to_csv`]. Node classes are
    /// rebuilt from `safe`; the returned field is marked converged.
    pub fn from_csv(text: &str, safe: &SafeSet) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty field file".into()))?;
        let body = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Format("missing `# ` header".into()))?;
        let mut n = None;
        let mut counts = None;
        let mut lower = None;
        let mut upper = None;
        let mut alpha = None;
        for part in body.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field `{part}`")))?;
            let nums = |v: &str| -> Result<Vec<f64>> {
                v.split(',')
                    .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("`{s}`: {e}"))))
                    .collect()
            };
            match k {
                "n" => n = Some(v.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?),
                "counts" => {
                    counts = Some(
                        v.split(',')
                            .map(|s| s.parse::<usize>().map_err(|e| Error::Format(e.to_string())))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "lower" => lower = Some(nums(v)?),
                "upper" => upper = Some(nums(v)?),
                "alpha" => alpha = Some(nums(v)?[0]),
                _ => return Err(Error::Format(format!("unknown header field `{k}`"))),
            }
        }
        let missing = |what: &str| Error::Format(format!("header lacks `{what}`"));
        let n = n.ok_or_else(|| missing("n"))?;
        let counts = counts.ok_or_else(|| missing("counts"))?;
        let lower = lower.ok_or_else(|| missing("lower"))?;
        let upper = upper.ok_or_else(|| missing("upper"))?;
        let alpha = alpha.ok_or_else(|| missing("alpha"))?;
        if counts.len() != n {
            return Err(Error::Format("header n does not match counts".into()));
        }
        let grid = Arc::new(Grid::build(&lower, &upper, &counts, safe)?);
        let mut w = vec![f64::NAN; grid.num_nodes()];
        let mut seen = 0;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != n + 1 {
                return Err(Error::Format(format!("row {}: expected {} columns", lineno + 2, n + 1)));
            }
            let multi = cols[..n]
                .iter()
                .zip(&counts)
                .map(|(s, &c)| match s.trim().parse::<usize>() {
                    Ok(i) if i < c => Ok(i),
                    _ => Err(Error::Format(format!("row {}: bad index `{s}`", lineno + 2))),
                })
                .collect::<Result<Vec<_>>>()?;
            let v: f64 = cols[n]
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("row {}: {e}", lineno + 2)))?;
            w[grid.linear(&multi)] = v;
            seen += 1;
        }
        if seen != grid.num_nodes() || w.iter().any(|v| v.is_nan()) {
            return Err(Error::Format(format!(
                "expected {} node rows, found {seen}",
                grid.num_nodes()
            )));
        }
        let mut field = Self::from_values(grid, w, alpha)?;
        field.params_hash = field.grid.geometry_hash(alpha);
        Ok(field)
    }
}
