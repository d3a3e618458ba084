//! Sparse multivariate polynomials with a small text grammar.
//!
//! Grammar (whitespace is allowed between any two tokens):
//!
//! ```text
//! poly   := sign? term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := number | var ('^' uint)?
//! var    := 'x' uint            // 1-based state index
//! number := decimal literal, optional exponent (1, 0.5, .25, 2e-3, 1.5E+2)
//! ```
//!
//! Numbers inside a term multiply into the coefficient and repeated
//! variables add their exponents, so `2 * x1 * 3 * x1` is `6 * x1^2`.
//! Parsed polynomials are canonical: like monomials merged, zero terms
//! dropped, terms sorted by exponent vector.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

impl Monomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.coeff;
        for (xi, &e) in x.iter().zip(&self.exps) {
            if e != 0 {
                v *= xi.powi(e as i32);
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Monomial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyParseError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for PolyParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.pos + 1, self.msg)
    }
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(
            nvars,
            vec![Monomial {
                coeff: c,
                exps: vec![0; nvars],
            }],
        )
    }

    /// Single monomial `coeff * x^exps`.
    pub fn monomial(coeff: f64, exps: &[u32]) -> Self {
        Self::from_terms(
            exps.len(),
            vec![Monomial {
                coeff,
                exps: exps.to_vec(),
            }],
        )
    }

    /// Builds a canonical polynomial. Panics if an exponent vector has the
    /// wrong length or a coefficient is not finite.
    pub fn from_terms(nvars: usize, terms: Vec<Monomial>) -> Self {
        for t in &terms {
            assert_eq!(t.exps.len(), nvars, "exponent vector length");
            assert!(t.coeff.is_finite(), "non-finite coefficient");
        }
        let mut p = Self { nvars, terms };
        p.canonicalize();
        p
    }

    fn canonicalize(&mut self) {
        self.terms.sort_by(|a, b| a.exps.cmp(&b.exps));
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.exps == t.exps => last.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        self.terms = merged;
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    /// Value at the origin, i.e. the constant term.
    pub fn constant_term(&self) -> f64 {
        self.terms
            .iter()
            .find(|t| t.exps.iter().all(|&e| e == 0))
            .map_or(0.0, |t| t.coeff)
    }

    /// Partial derivative with respect to variable `j` (0-based).
    pub fn partial(&self, j: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exps[j] > 0)
            .map(|t| {
                let mut exps = t.exps.clone();
                exps[j] -= 1;
                Monomial {
                    coeff: t.coeff * t.exps[j] as f64,
                    exps,
                }
            })
            .collect();
        Polynomial::from_terms(self.nvars, terms)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nvars).map(|j| self.partial(j).eval(x)).collect()
    }

    pub fn parse(text: &str, nvars: usize) -> Result<Self, PolyParseError> {
        Parser::new(text, nvars).parse()
    }
}

/// Serializes in the parser's grammar. `{:?}` on the coefficients keeps
/// them bit-exact through a round trip.
impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            let neg = t.coeff.is_sign_negative();
            match (k, neg) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            write!(f, "{:?}", t.coeff.abs())?;
            for (i, &e) in t.exps.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, " * x{}", i + 1)?,
                    _ => write!(f, " * x{}^{}", i + 1, e)?,
                }
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nvars: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, nvars: usize) -> Self {
        Self {
            src: text.as_bytes(),
            pos: 0,
            nvars,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PolyParseError> {
        Err(PolyParseError {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Polynomial, PolyParseError> {
        let mut terms = Vec::new();
        let mut sign = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                -1.0
            }
            Some(b'+') => {
                self.pos += 1;
                1.0
            }
            None => return self.err("empty polynomial"),
            _ => 1.0,
        };
        loop {
            let mut term = self.term()?;
            term.coeff *= sign;
            terms.push(term);
            match self.peek() {
                None => break,
                Some(b'+') => sign = 1.0,
                Some(b'-') => sign = -1.0,
                Some(c) => return self.err(format!("unexpected character `{}`", c as char)),
            }
            self.pos += 1;
        }
        if let Some(t) = terms.iter().find(|t| !t.coeff.is_finite()) {
            return self.err(format!("coefficient {} is not finite", t.coeff));
        }
        Ok(Polynomial::from_terms(self.nvars, terms))
    }

    fn term(&mut self) -> Result<Monomial, PolyParseError> {
        let mut m = Monomial {
            coeff: 1.0,
            exps: vec![0; self.nvars],
        };
        loop {
            match self.peek() {
                Some(b'x') => {
                    self.pos += 1;
                    let idx = self.uint()?;
                    if idx == 0 || idx as usize > self.nvars {
                        return self.err(format!("variable x{idx} out of range 1..={}", self.nvars));
                    }
                    let e = if self.peek() == Some(b'^') {
                        self.pos += 1;
                        self.skip_ws();
                        self.uint()?
                    } else {
                        1
                    };
                    m.exps[idx as usize - 1] += e;
                }
                Some(c) if c.is_ascii_digit() || c == b'.' => m.coeff *= self.number()?,
                Some(c) => return self.err(format!("expected number or variable, found `{}`", c as char)),
                None => return self.err("expected number or variable, found end of input"),
            }
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                return Ok(m);
            }
        }
    }

    fn uint(&mut self) -> Result<u32, PolyParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected unsigned integer");
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        s.parse().or_else(|_| self.err(format!("integer `{s}` too large")))
    }

    fn number(&mut self) -> Result<f64, PolyParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            digits(self);
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        s.parse::<f64>().or_else(|_| {
            self.pos = start;
            self.err(format!("malformed number `{s}`"))
        })
    }
}
