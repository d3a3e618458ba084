//! Python module `clbf`: solve, inspect and check barrier-weighted Zubov
//! value fields from Python.

use std::sync::Arc;

use clbf_core::certify::{
    check_clbf_conditions, check_compatibility as core_compat, check_positive_definite, estimate_domain, Compatibility,
    CompatibilityQuery,
};
use clbf_core::feedback::{batch_verify, descent_monitor, simulate, ControlSource, Policy, SampleSpec, SimParams};
use clbf_core::solver::{with_workers, Integrator};
use clbf_core::system_model::parse_system_config;
use clbf_core::{
    load_benchmark, BenchmarkId, ControlSet, Error, Grid, RunningCost, SolveStats, SolverParams, ValueField,
    ZubovSolver, ZubovTransform,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NotConverged => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn json<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// A system with grid, control set, cost and solver parameters.
#[pyclass(module = "clbf")]
struct Problem {
    solver: ZubovSolver,
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
}

#[pymethods]
impl Problem {
    /// Catalog system, optionally with some parameters replaced.
    #[staticmethod]
    #[pyo3(signature = (name, *, counts=None, u_max=None, samples=None, dt=None, tol=None, max_sweeps=None, barrier=None, alpha=None))]
    #[allow(clippy::too_many_arguments)]
    fn benchmark(
        name: &str,
        counts: Option<Vec<usize>>,
        u_max: Option<Vec<f64>>,
        samples: Option<usize>,
        dt: Option<f64>,
        tol: Option<f64>,
        max_sweeps: Option<usize>,
        barrier: Option<bool>,
        alpha: Option<f64>,
    ) -> PyResult<Self> {
        let id: BenchmarkId = name.parse().map_err(py_err)?;
        let mut b = load_benchmark(id);
        if u_max.is_some() || samples.is_some() {
            let u = u_max.unwrap_or_else(|| b.controls.u_max().to_vec());
            b.controls = ControlSet::new(&u, samples.unwrap_or(b.controls.samples_per_axis())).map_err(py_err)?;
        }
        if let Some(c) = counts {
            b.counts = c;
        }
        if let Some(on) = barrier {
            b.cost = b.cost.with_barrier(on);
        }
        if let Some(a) = alpha {
            b.transform = ZubovTransform::new(a).map_err(py_err)?;
        }
        b.params.dt = dt.unwrap_or(b.params.dt);
        b.params.tol = tol.unwrap_or(b.params.tol);
        b.params.max_sweeps = max_sweeps.unwrap_or(b.params.max_sweeps);
        let solver = ZubovSolver::new(b.system, b.safe, b.cost, b.transform, b.controls, b.params).map_err(py_err)?;
        Ok(Self {
            solver,
            lower: b.lower,
            upper: b.upper,
            counts: b.counts,
        })
    }

    /// System from config text (`state_dim`, `input_dim`, `f.i`, `g.i.j`,
    /// `h`) with identity cost weights.
    #[staticmethod]
    #[pyo3(signature = (text, lower, upper, counts, u_max, samples, *, dt=0.01, tol=1e-6, max_sweeps=10000, integrator="euler", barrier=true, alpha=0.1))]
    #[allow(clippy::too_many_arguments)]
    fn from_system(
        text: &str,
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
        u_max: Vec<f64>,
        samples: usize,
        dt: f64,
        tol: f64,
        max_sweeps: usize,
        integrator: &str,
        barrier: bool,
        alpha: f64,
    ) -> PyResult<Self> {
        let (system, safe) = parse_system_config(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let cost = RunningCost::identity(system.state_dim(), system.input_dim(), barrier);
        let integrator: Integrator = integrator.parse().map_err(PyValueError::new_err)?;
        let solver = ZubovSolver::new(
            system,
            safe,
            cost,
            ZubovTransform::new(alpha).map_err(py_err)?,
            ControlSet::new(&u_max, samples).map_err(py_err)?,
            SolverParams {
                dt,
                tol,
                max_sweeps,
                integrator,
            },
        )
        .map_err(py_err)?;
        Ok(Self {
            solver,
            lower,
            upper,
            counts,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.solver.system.name().to_string()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.solver.state_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.solver.system.input_dim()
    }

    /// `h(x)`; the safe set is `h < 1`.
    fn h(&self, x: Vec<f64>) -> PyResult<f64> {
        self.solver.safe.eval_h(&x).map_err(py_err)
    }

    /// Running cost `eta(x, u)` (`inf` outside the safe set).
    fn eta(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        self.solver.cost.eval_eta(&self.solver.safe, &x, &u).map_err(py_err)
    }

    /// Value iteration to convergence. Raises RuntimeError if the sweep
    /// limit is reached first.
    #[pyo3(signature = (workers=None))]
    fn solve(&self, py: Python<'_>, workers: Option<usize>) -> PyResult<Field> {
        let grid = Arc::new(Grid::build(&self.lower, &self.upper, &self.counts, &self.solver.safe).map_err(py_err)?);
        let solver = &self.solver;
        let run = move || solver.solve(grid);
        let (field, stats) = py
            .detach(|| match workers {
                Some(n) => with_workers(n, run),
                None => run(),
            })
            .map_err(py_err)?;
        if !field.converged {
            return Err(PyRuntimeError::new_err(format!(
                "no convergence within {} sweeps (last change {:e})",
                stats.sweeps, stats.final_change
            )));
        }
        Ok(Field {
            solver: self.solver.clone(),
            field,
            stats,
        })
    }
}

/// A converged value field `W` on its grid.
#[pyclass(module = "clbf")]
struct Field {
    solver: ZubovSolver,
    field: ValueField,
    stats: SolveStats,
}

#[pymethods]
impl Field {
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.field.values().to_vec()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.field.grid().counts().to_vec()
    }

    #[getter]
    fn lower(&self) -> Vec<f64> {
        self.field.grid().lower().to_vec()
    }

    #[getter]
    fn upper(&self) -> Vec<f64> {
        self.field.grid().upper().to_vec()
    }

    /// Solver statistics as a dict.
    #[getter]
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json(py, &self.stats)
    }

    /// Node coordinates in storage order.
    fn nodes(&self) -> Vec<Vec<f64>> {
        let g = self.field.grid();
        (0..g.num_nodes()).map(|i| g.node(i)).collect()
    }

    /// Multilinear interpolation of `W` (1 outside the box).
    fn w(&self, x: Vec<f64>) -> PyResult<f64> {
        self.field.interpolate(&x).map_err(py_err)
    }

    /// Recovered value `V = beta^-1(W)`; `inf` where `W = 1`.
    fn v(&self, x: Vec<f64>) -> PyResult<f64> {
        let w = self.field.interpolate(&x).map_err(py_err)?;
        Ok(self.solver.transform.beta_inv(w).unwrap_or(f64::INFINITY))
    }

    fn to_csv(&self) -> String {
        self.field.to_csv()
    }

    /// Decrease, level-set and positive-definiteness reports.
    #[pyo3(signature = (eps_lvl=0.05, margin=0.0))]
    fn certify<'py>(&self, py: Python<'py>, eps_lvl: f64, margin: f64) -> PyResult<Bound<'py, PyAny>> {
        let (dec, lvl) = check_clbf_conditions(&self.field, &self.solver, eps_lvl, margin).map_err(py_err)?;
        let pd = check_positive_definite(&self.field);
        json(
            py,
            &serde_json::json!({ "decrease": dec, "level_sets": lvl, "positive_definite": pd }),
        )
    }

    /// Nodes of the domain estimate `{w <= 1 - eps_lvl}` connected to the
    /// origin.
    #[pyo3(signature = (eps_lvl=0.01))]
    fn domain(&self, eps_lvl: f64) -> Vec<Vec<f64>> {
        let d = estimate_domain(&self.field, eps_lvl);
        let g = self.field.grid();
        (0..g.num_nodes())
            .filter(|&i| d.component[i])
            .map(|i| g.node(i))
            .collect()
    }

    fn greedy_control(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Policy::new(&self.solver, &self.field)
            .and_then(|p| p.greedy_control(&x))
            .map_err(py_err)
    }

    /// Closed-loop trajectory under the greedy feedback, or under a held
    /// `constant_u`.
    #[pyo3(signature = (x0, *, horizon=50.0, dt_sim=0.01, delta_conv=0.05, constant_u=None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        x0: Vec<f64>,
        horizon: f64,
        dt_sim: f64,
        delta_conv: f64,
        constant_u: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let p = SimParams {
            horizon,
            dt_sim,
            delta_conv,
        };
        let policy = Policy::new(&self.solver, &self.field).map_err(py_err)?;
        let source = match constant_u {
            Some(u) => ControlSource::Constant(u),
            None => ControlSource::Greedy(policy),
        };
        let s = &self.solver;
        let rec = simulate(&s.system, &s.safe, &source, &x0, None, p).map_err(py_err)?;
        let mut v = serde_json::to_value(&rec).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        v["max_w_increase"] = descent_monitor(&self.field, &rec).ok().into();
        to_py(py, &v)
    }

    /// Greedy closed loops from every node with `w <= 1 - eps_lvl`.
    #[pyo3(signature = (eps_lvl=0.2, *, horizon=50.0, dt_sim=0.01, delta_conv=0.05, workers=None))]
    fn batch_verify<'py>(
        &self,
        py: Python<'py>,
        eps_lvl: f64,
        horizon: f64,
        dt_sim: f64,
        delta_conv: f64,
        workers: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let p = SimParams {
            horizon,
            dt_sim,
            delta_conv,
        };
        let policy = Policy::new(&self.solver, &self.field).map_err(py_err)?;
        let run = || batch_verify(&policy, eps_lvl, SampleSpec::Nodes, p, 5);
        let r = py
            .detach(|| match workers {
                Some(n) => with_workers(n, run),
                None => run(),
            })
            .map_err(py_err)?;
        json(py, &r)
    }
}

fn transform(alpha: f64) -> PyResult<ZubovTransform> {
    ZubovTransform::new(alpha).map_err(py_err)
}

/// `1 - exp(-alpha s)`.
#[pyfunction]
#[pyo3(signature = (s, alpha=0.1))]
fn beta(s: f64, alpha: f64) -> PyResult<f64> {
    transform(alpha)?.beta(s).map_err(py_err)
}

/// `-ln(1 - w) / alpha`.
#[pyfunction]
#[pyo3(signature = (w, alpha=0.1))]
fn beta_inv(w: f64, alpha: f64) -> PyResult<f64> {
    transform(alpha)?.beta_inv(w).map_err(py_err)
}

#[pyfunction]
fn benchmarks() -> Vec<&'static str> {
    BenchmarkId::ALL.iter().map(|b| b.name()).collect()
}

/// Is there `u` with `zeta . (f + g u) < -w_margin` and
/// `xi . (f + g u) <= alpha0 (1 - h)`? Returns `(feasible, witness)`;
/// `g` is a list of rows.
#[pyfunction]
#[pyo3(signature = (zeta, xi, f, g, w_margin, alpha0, h))]
fn check_compatibility(
    zeta: Vec<f64>,
    xi: Vec<f64>,
    f: Vec<f64>,
    g: Vec<Vec<f64>>,
    w_margin: f64,
    alpha0: f64,
    h: f64,
) -> PyResult<(bool, Option<Vec<f64>>)> {
    let m = g.first().map_or(0, Vec::len);
    if g.len() != f.len() || g.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("g must have one row of equal length per state"));
    }
    let q = CompatibilityQuery {
        zeta,
        xi,
        f_vec: f,
        g_mat: g.concat(),
        input_dim: m,
        w_margin,
        alpha0,
        h_val: h,
    };
    Ok(match core_compat(&q).map_err(py_err)? {
        Compatibility::Feasible { witness } => (true, Some(witness)),
        Compatibility::Infeasible { .. } => (false, None),
    })
}

#[pymodule]
fn clbf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Field>()?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(beta_inv, m)?)?;
    m.add_function(wrap_pyfunction!(benchmarks, m)?)?;
    m.add_function(wrap_pyfunction!(check_compatibility, m)?)?;
    Ok(())
}
