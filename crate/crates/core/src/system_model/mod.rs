//! Control-affine dynamics `x' = f(x) + g(x) u` with polynomial entries,
//! safe sets `S = {h < 1}`, configuration text and the benchmark catalog.

mod catalog;
mod poly;

pub use catalog::{load_benchmark, BenchmarkId, BenchmarkSetup};
pub use poly::{Monomial, PolyParseError, Polynomial};

use crate::config::KvDoc;
use crate::error::{check_dim, ConfigError, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    input_dim: usize,
    f: Vec<Polynomial>,
    /// Row-major `n x m`.
    g: Vec<Polynomial>,
}

impl SystemModel {
    pub fn new(name: impl Into<String>, f: Vec<Polynomial>, g: Vec<Polynomial>, input_dim: usize) -> Result<Self> {
        let n = f.len();
        if n == 0 || input_dim == 0 {
            return Err(Error::Construction(
                "state and input dimensions must be positive".into(),
            ));
        }
        if g.len() != n * input_dim {
            return Err(Error::Construction(format!(
                "g has {} entries, expected {}",
                g.len(),
                n * input_dim
            )));
        }
        if let Some(p) = f.iter().chain(&g).find(|p| p.nvars() != n) {
            return Err(Error::Construction(format!(
                "polynomial over {} variables in a {n}-dimensional system",
                p.nvars()
            )));
        }
        if let Some((i, p)) = f.iter().enumerate().find(|(_, p)| p.constant_term() != 0.0) {
            return Err(Error::Construction(format!(
                "f.{} is {} at the origin; f(0) = 0 is required",
                i + 1,
                p.constant_term()
            )));
        }
        Ok(Self {
            name: name.into(),
            state_dim: n,
            input_dim,
            f,
            g,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn f_terms(&self) -> &[Polynomial] {
        &self.f
    }

    pub fn g_terms(&self) -> &[Polynomial] {
        &self.g
    }

    /// Returns `(f(x), g(x))` with `g` flattened row-major.
    pub fn eval_dynamics(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("state", x.len(), self.state_dim)?;
        let mut f = vec![0.0; self.state_dim];
        let mut g = vec![0.0; self.state_dim * self.input_dim];
        self.eval_into(x, &mut f, &mut g);
        Ok((f, g))
    }

    /// Unchecked evaluation into caller buffers.
    pub fn eval_into(&self, x: &[f64], f: &mut [f64], g: &mut [f64]) {
        for (out, p) in f.iter_mut().zip(&self.f) {
            *out = p.eval(x);
        }
        for (out, p) in g.iter_mut().zip(&self.g) {
            *out = p.eval(x);
        }
    }

    /// `f(x) + g(x) u` into `out`.
    pub fn velocity(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let m = self.input_dim;
        for (i, out) in out.iter_mut().enumerate() {
            let mut v = self.f[i].eval(x);
            for (j, &uj) in u.iter().enumerate() {
                if uj != 0.0 {
                    v += self.g[i * m + j].eval(x) * uj;
                }
            }
            *out = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    h: Polynomial,
    description: String,
}

impl SafeSet {
    pub fn new(h: Polynomial, description: impl Into<String>) -> Result<Self> {
        let h0 = h.constant_term();
        if !(h0 < 1.0) {
            return Err(Error::Construction(format!(
                "h(0) = {h0}; the origin must satisfy h < 1"
            )));
        }
        Ok(Self {
            h,
            description: description.into(),
        })
    }

    /// `h = 0`: no obstacle at all.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            h: Polynomial::zero(n),
            description: "unconstrained".into(),
        }
    }

    pub fn h(&self) -> &Polynomial {
        &self.h
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn state_dim(&self) -> usize {
        self.h.nvars()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.h.is_zero()
    }

    pub fn eval_h(&self, x: &[f64]) -> Result<f64> {
        check_dim("state", x.len(), self.h.nvars())?;
        Ok(self.h.eval(x))
    }

    /// Unchecked `h(x)`.
    #[inline]
    pub fn h_at(&self, x: &[f64]) -> f64 {
        self.h.eval(x)
    }

    #[inline]
    pub fn is_unsafe(&self, x: &[f64]) -> bool {
        self.h.eval(x) >= 1.0
    }
}

/// Reads the system keys (`name`, `state_dim`, `input_dim`, `f.<i>`,
/// `g.<i>.<j>`, `h`) from key-value text. Keys of other sections are
/// ignored here.
pub fn parse_system_config(text: &str) -> std::result::Result<(SystemModel, SafeSet), ConfigError> {
    let doc = KvDoc::parse(text)?;
    system_from_doc(&doc)
}

pub fn system_from_doc(doc: &KvDoc) -> std::result::Result<(SystemModel, SafeSet), ConfigError> {
    let n: usize = doc.require_value("state_dim")?;
    let m: usize = doc.require_value("input_dim")?;
    for key in ["state_dim", "input_dim"] {
        let e = doc.require(key)?;
        if e.parse::<usize>()? == 0 {
            return Err(e.invalid("must be positive"));
        }
    }
    let name = doc.get("name").map_or("custom", |e| e.value.as_str());

    let poly = |key: &str| -> std::result::Result<(Polynomial, usize), ConfigError> {
        let e = doc.require(key)?;
        Polynomial::parse(&e.value, n)
            .map(|p| (p, e.line))
            .map_err(|err| ConfigError::Syntax {
                line: e.line,
                msg: format!("`{key}` {err}"),
            })
    };

    let mut f = Vec::with_capacity(n);
    for i in 1..=n {
        let key = format!("f.{i}");
        let (p, line) = poly(&key)?;
        let c = p.constant_term();
        if c != 0.0 {
            return Err(ConfigError::DriftAtOrigin { line, key, value: c });
        }
        f.push(p);
    }
    let mut g = Vec::with_capacity(n * m);
    for i in 1..=n {
        for j in 1..=m {
            g.push(poly(&format!("g.{i}.{j}"))?.0);
        }
    }
    let (h, hline) = poly("h")?;
    let h0 = h.constant_term();
    if !(h0 < 1.0) {
        return Err(ConfigError::OriginUnsafe { line: hline, value: h0 });
    }
    for e in doc.entries() {
        let bad_index = |idx: &str, bound: usize| idx.parse::<usize>().map_or(true, |k| k == 0 || k > bound);
        let stray = match e.key.split('.').collect::<Vec<_>>()[..] {
            ["f", i] => bad_index(i, n),
            ["g", i, j] => bad_index(i, n) || bad_index(j, m),
            ["f", ..] | ["g", ..] => true,
            _ => false,
        };
        if stray {
            return Err(ConfigError::UnknownKey {
                line: e.line,
                key: e.key.clone(),
            });
        }
    }

    let sys = SystemModel::new(name, f, g, m).expect("validated above");
    let safe = SafeSet::new(h, "h from config").expect("validated above");
    Ok((sys, safe))
}

/// Writes the system section in the same schema `parse_system_config` reads.
pub fn serialize_system(sys: &SystemModel, safe: &SafeSet) -> String {
    let mut out = String::new();
    out.push_str(&format!("name = {}\n", sys.name));
    out.push_str(&format!("state_dim = {}\n", sys.state_dim));
    out.push_str(&format!("input_dim = {}\n", sys.input_dim));
    for (i, p) in sys.f.iter().enumerate() {
        out.push_str(&format!("f.{} = {}\n", i + 1, p));
    }
    for i in 0..sys.state_dim {
        for j in 0..sys.input_dim {
            out.push_str(&format!("g.{}.{} = {}\n", i + 1, j + 1, sys.g[i * sys.input_dim + j]));
        }
    }
    out.push_str(&format!("h = {}\n", safe.h));
    out
}
