//! Running cost `eta(x, u) = theta (x'Qx + u'Ru) / (1 - h(x))^k` and the
//! Zubov transform `beta(s) = 1 - exp(-alpha s)`.
//!
//! The terminal cost is never represented explicitly: any trajectory that
//! reaches `h >= 1` has infinite cost, which in transformed coordinates is
//! the pinned value `W = 1`. Growth bounds near the origin and the bound by
//! a velocity majorant hold by construction for this quadratic-over-barrier
//! form and are not checked at runtime.

use serde::{Deserialize, Serialize};

use crate::config::KvDoc;
use crate::error::{check_dim, ConfigError, Error, Result};
use crate::system_model::SafeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningCost {
    theta: f64,
    /// Row-major `n x n`.
    q: Vec<f64>,
    /// Row-major `m x m`.
    r: Vec<f64>,
    k: f64,
    barrier_on: bool,
}

fn is_spd(a: &[f64], n: usize) -> bool {
    if a.len() != n * n || a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for i in 0..n {
        for j in 0..i {
            if a[i * n + j] != a[j * n + i] {
                return false;
            }
        }
    }
    // Cholesky; fails on the first non-positive pivot.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    true
}

fn quad(a: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += a[i * n + j] * v[j];
        }
        s += v[i] * row;
    }
    s
}

fn identity(n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    a
}

impl RunningCost {
    pub fn new(theta: f64, q: Vec<f64>, r: Vec<f64>, k: f64, barrier_on: bool) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Construction(format!("theta = {theta} must be positive")));
        }
        let n = (q.len() as f64).sqrt().round() as usize;
        let m = (r.len() as f64).sqrt().round() as usize;
        if n == 0 || m == 0 || !is_spd(&q, n) {
            return Err(Error::Construction("Q must be symmetric positive definite".into()));
        }
        if !is_spd(&r, m) {
            return Err(Error::Construction("R must be symmetric positive definite".into()));
        }
        if barrier_on && !(k >= 1.0 && k.is_finite()) {
            return Err(Error::Construction(format!("barrier exponent k = {k} must be >= 1")));
        }
        Ok(Self {
            theta,
            q,
            r,
            k,
            barrier_on,
        })
    }

    /// `theta = 1`, `Q = I`, `R = I`, `k = 1`.
    pub fn identity(n: usize, m: usize, barrier_on: bool) -> Self {
        Self::new(1.0, identity(n), identity(m), 1.0, barrier_on).unwrap()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn barrier_on(&self) -> bool {
        self.barrier_on
    }

    pub fn state_dim(&self) -> usize {
        (self.q.len() as f64).sqrt().round() as usize
    }

    pub fn input_dim(&self) -> usize {
        (self.r.len() as f64).sqrt().round() as usize
    }

    pub fn with_barrier(mut self, on: bool) -> Self {
        self.barrier_on = on;
        self
    }

    pub fn eval_eta(&self, safe: &SafeSet, x: &[f64], u: &[f64]) -> Result<f64> {
        check_dim("state", x.len(), self.state_dim())?;
        check_dim("control", u.len(), self.input_dim())?;
        Ok(self.eta_with_h(safe.h_at(x), x, u))
    }

    pub fn eval_omega(&self, safe: &SafeSet, x: &[f64]) -> Result<f64> {
        check_dim("state", x.len(), self.state_dim())?;
        Ok(self.eta_with_h(safe.h_at(x), x, &vec![0.0; self.input_dim()]))
    }

    /// `eta` given a precomputed `h(x)`. Unchecked dimensions.
    #[inline]
    pub fn eta_with_h(&self, h: f64, x: &[f64], u: &[f64]) -> f64 {
        if h >= 1.0 {
            return f64::INFINITY;
        }
        let num = self.theta * (quad(&self.q, x) + quad(&self.r, u));
        if self.barrier_on {
            num / (1.0 - h).powf(self.k)
        } else {
            num
        }
    }

    /// Reads `cost.*` keys; absent keys take the identity defaults.
    pub fn from_doc(doc: &KvDoc, n: usize, m: usize) -> std::result::Result<Self, ConfigError> {
        let theta = doc.parse_value("cost.theta")?.unwrap_or(1.0);
        let q = doc.parse_list("cost.Q")?.unwrap_or_else(|| identity(n));
        let r = doc.parse_list("cost.R")?.unwrap_or_else(|| identity(m));
        let k = doc.parse_value("cost.k")?.unwrap_or(1.0);
        let barrier_on = doc.parse_value("cost.barrier_on")?.unwrap_or(true);
        let blame = |key: &str| {
            doc.get(key)
                .or_else(|| doc.get("cost.theta"))
                .map(|e| e.line)
                .unwrap_or(0)
        };
        if q.len() != n * n {
            return Err(ConfigError::InvalidValue {
                line: blame("cost.Q"),
                key: "cost.Q".into(),
                msg: format!("expected {} entries", n * n),
            });
        }
        if r.len() != m * m {
            return Err(ConfigError::InvalidValue {
                line: blame("cost.R"),
                key: "cost.R".into(),
                msg: format!("expected {} entries", m * m),
            });
        }
        Self::new(theta, q, r, k, barrier_on).map_err(|e| ConfigError::InvalidValue {
            line: blame("cost.Q"),
            key: "cost".into(),
            msg: e.to_string(),
        })
    }

    pub fn to_config(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        format!(
            "cost.theta = {:?}\ncost.Q = {}\ncost.R = {}\ncost.k = {:?}\ncost.barrier_on = {}\n",
            self.theta,
            list(&self.q),
            list(&self.r),
            self.k,
            self.barrier_on
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZubovTransform {
    alpha: f64,
}

impl Default for ZubovTransform {
    fn default() -> Self {
        Self { alpha: 0.1 }
    }
}

impl ZubovTransform {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Construction(format!("alpha = {alpha} must be positive")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `1 - exp(-alpha s)`, with `beta(inf) = 1`.
    pub fn beta(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Input(format!("beta is defined for s >= 0, got {s}")));
        }
        Ok(-(-self.alpha * s).exp_m1())
    }

    /// Inverse transform. `w >= 1` maps to `+inf` (outside the domain).
    pub fn beta_inv(&self, w: f64) -> Result<f64> {
        if !(w >= 0.0) {
            return Err(Error::Input(format!("beta_inv is defined for w >= 0, got {w}")));
        }
        if w >= 1.0 {
            return Ok(f64::INFINITY);
        }
        Ok(-(-w).ln_1p() / self.alpha)
    }

    /// Per-step decay factor `exp(-alpha c)` for accumulated cost `c`.
    #[inline]
    pub fn decay(&self, cost: f64) -> f64 {
        (-self.alpha * cost).exp()
    }

    pub fn from_doc(doc: &KvDoc) -> std::result::Result<Self, ConfigError> {
        match doc.get("transform.alpha") {
            None => Ok(Self::default()),
            Some(e) => Self::new(e.parse()?).map_err(|err| e.invalid(err.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceProfile {
    pub h_values: Vec<f64>,
    pub omega: Vec<f64>,
    /// `omega (1 - h)` never drops below its value at the first point and
    /// `omega` increases strictly, i.e. `omega` grows at least like
    /// `(1 - h)^-1`, which is not integrable towards the boundary.
    pub divergent: bool,
}

/// Evaluates `omega` along points approaching the safe-set boundary.
pub fn divergence_profile(cost: &RunningCost, safe: &SafeSet, ray: &[Vec<f64>]) -> Result<DivergenceProfile> {
    let mut h_values = Vec::with_capacity(ray.len());
    let mut omega = Vec::with_capacity(ray.len());
    for x in ray {
        let h = safe.eval_h(x)?;
        if h >= 1.0 {
            return Err(Error::Input(format!("ray point {x:?} is outside the safe set")));
        }
        if h_values.last().is_some_and(|&prev| h <= prev) {
            return Err(Error::Input("h must increase strictly along the ray".into()));
        }
        h_values.push(h);
        omega.push(cost.eval_omega(safe, x)?);
    }
    let divergent = ray.len() >= 2 && {
        let base = omega[0] * (1.0 - h_values[0]);
        omega.windows(2).all(|w| w[1] > w[0]) && omega.iter().zip(&h_values).all(|(o, h)| o * (1.0 - h) >= base)
    };
    Ok(DivergenceProfile {
        h_values,
        omega,
        divergent,
    })
}
