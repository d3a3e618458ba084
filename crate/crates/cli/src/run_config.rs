//! Effective parameters of one invocation. Every value comes from the first
//! of: command-line flag, config file, built-in default (the benchmark's own
//! setup when a benchmark is selected).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use clbf_core::certify::LayerParams;
use clbf_core::config::{Entry, KvDoc};
use clbf_core::feedback::SimParams;
use clbf_core::solver::{Integrator, SolverParams};
use clbf_core::system_model::{serialize_system, system_from_doc};
use clbf_core::{
    load_benchmark, BenchmarkId, ConfigError, ControlSet, Grid, RunningCost, SafeSet, SystemModel, ZubovSolver,
    ZubovTransform,
};

use crate::CliError;

const KNOWN_KEYS: &[&str] = &[
    "benchmark",
    "output.dir",
    "seed",
    "grid.lower",
    "grid.upper",
    "grid.counts",
    "controls.u_max",
    "controls.samples",
    "cost.theta",
    "cost.Q",
    "cost.R",
    "cost.k",
    "cost.barrier_on",
    "transform.alpha",
    "solver.dt",
    "solver.tol",
    "solver.max_sweeps",
    "solver.integrator",
    "certify.eps_lvl",
    "certify.margin",
    "certify.domain_eps_lvl",
    "certify.boundary_eps_lvl",
    "certify.layer_epsilon",
    "certify.alpha0",
    "certify.margin_c",
    "certify.jitter",
    "certify.threshold",
    "sim.horizon",
    "sim.dt_sim",
    "sim.delta_conv",
    "sim.x0",
    "batch.eps_lvl",
    "batch.jitter",
    "batch.threshold",
    "batch.worst",
];

fn is_system_key(key: &str) -> bool {
    matches!(key, "name" | "state_dim" | "input_dim" | "h") || key.starts_with("f.") || key.starts_with("g.")
}

/// Flags shared by every subcommand that runs a computation.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Catalog system (see `bench-list`).
    #[arg(long)]
    pub benchmark: Option<String>,
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; never changes numeric output.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seed for jittered sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long)]
    pub integrator: Option<String>,
    /// Nodes per axis, comma separated (one value applies to every axis).
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lower: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub upper: Option<String>,
    #[arg(long)]
    pub u_max: Option<String>,
    /// Control samples per input axis (odd).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `on` or `off`.
    #[arg(long)]
    pub barrier: Option<String>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub eps_lvl: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt_sim: Option<f64>,
    #[arg(long)]
    pub delta_conv: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub batch_eps_lvl: Option<f64>,
    /// Jittered samples per node in batch verification (0 = nodes only).
    #[arg(long)]
    pub jitter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyParams {
    /// Level for the decrease check.
    pub eps_lvl: f64,
    pub margin: f64,
    pub domain_eps_lvl: f64,
    pub boundary_eps_lvl: f64,
    pub layer: LayerParams,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchParams {
    pub eps_lvl: f64,
    pub jitter: usize,
    pub threshold: f64,
    pub worst: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub benchmark: Option<BenchmarkId>,
    pub system: SystemModel,
    pub safe: SafeSet,
    pub cost: RunningCost,
    pub transform: ZubovTransform,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub u_max: Vec<f64>,
    pub samples: usize,
    pub solver: SolverParams,
    pub certify: CertifyParams,
    pub sim: SimParams,
    pub x0: Option<Vec<f64>>,
    pub batch: BatchParams,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: PathBuf,
}

fn flag_error(flag: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("--{flag}: {msg}"))
}

fn parse_flag_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| flag_error(flag, format!("`{s}`: {e}")))
        })
        .collect()
}

fn broadcast<T: Clone>(v: Vec<T>, n: usize, what: &str) -> Result<Vec<T>, String> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); n]),
        l if l == n => Ok(v),
        l => Err(format!("{what}: expected 1 or {n} values, got {l}")),
    }
}

fn entry_broadcast<T: Clone>(e: &Entry, v: Vec<T>, n: usize) -> Result<Vec<T>, ConfigError> {
    broadcast(v, n, &e.key).map_err(|m| e.invalid(m))
}

fn parse_bool_word(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn list_text<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn load(ov: &Overrides) -> Result<Self, CliError> {
        let text = match &ov.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_text(&text, ov)
    }

    pub fn from_text(text: &str, ov: &Overrides) -> Result<Self, CliError> {
        let doc = KvDoc::parse(text)?;
        for e in doc.entries() {
            if !KNOWN_KEYS.contains(&e.key.as_str()) && !is_system_key(&e.key) {
                return Err(ConfigError::UnknownKey {
                    line: e.line,
                    key: e.key.clone(),
                }
                .into());
            }
        }
        let has_system = doc.entries().iter().any(|e| is_system_key(&e.key));
        let cfg_bench = doc.get("benchmark");
        if let (Some(b), true) = (cfg_bench, has_system) {
            return Err(b
                .invalid("a config names either a benchmark or a system, not both")
                .into());
        }
        let benchmark = match (&ov.benchmark, cfg_bench) {
            (Some(name), _) => Some(name.parse::<BenchmarkId>().map_err(|e| flag_error("benchmark", e))?),
            (None, Some(e)) => Some(
                e.value
                    .parse::<BenchmarkId>()
                    .map_err(|err| e.invalid(err.to_string()))?,
            ),
            (None, None) => None,
        };

        let base = benchmark.map(load_benchmark);
        let (system, safe) = match &base {
            Some(b) => (b.system.clone(), b.safe.clone()),
            None if has_system => system_from_doc(&doc)?,
            None => {
                return Err(CliError::Config(
                    "no system: pass --benchmark or give a config with a system section".into(),
                ))
            }
        };
        let n = system.state_dim();
        let m = system.input_dim();

        // cost: keys present in the file replace the base value one by one
        let base_cost = base
            .as_ref()
            .map_or_else(|| RunningCost::identity(n, m, true), |b| b.cost.clone());
        let theta = doc.parse_value("cost.theta")?.unwrap_or(base_cost.theta());
        let q = doc.parse_list("cost.Q")?.unwrap_or_else(|| base_cost.q().to_vec());
        let r = doc.parse_list("cost.R")?.unwrap_or_else(|| base_cost.r().to_vec());
        let mut k = doc.parse_value("cost.k")?.unwrap_or(base_cost.k());
        let mut barrier_on = match doc.get("cost.barrier_on") {
            Some(e) => parse_bool_word(&e.value).ok_or_else(|| e.invalid("expected on/off"))?,
            None => base_cost.barrier_on(),
        };
        if let Some(v) = ov.k {
            k = v;
        }
        if let Some(b) = &ov.barrier {
            barrier_on = parse_bool_word(b).ok_or_else(|| flag_error("barrier", "expected on/off"))?;
        }
        if q.len() != n * n || r.len() != m * m {
            return Err(CliError::Config(format!(
                "cost: Q needs {} and R needs {} entries",
                n * n,
                m * m
            )));
        }
        let cost = RunningCost::new(theta, q, r, k, barrier_on).map_err(|e| CliError::Config(format!("cost: {e}")))?;

        let mut alpha = match doc.get("transform.alpha") {
            Some(e) => e.parse::<f64>()?,
            None => base.as_ref().map_or(0.1, |b| b.transform.alpha()),
        };
        if let Some(a) = ov.alpha {
            alpha = a;
        }
        let transform = ZubovTransform::new(alpha).map_err(|e| CliError::Config(format!("alpha: {e}")))?;

        let vec_f64 = |key: &str,
                       flag: &str,
                       ov_val: &Option<String>,
                       base_val: Option<Vec<f64>>,
                       len: usize|
         -> Result<Vec<f64>, CliError> {
            if let Some(t) = ov_val {
                return broadcast(parse_flag_list(flag, t)?, len, flag).map_err(|m| flag_error(flag, m));
            }
            match doc.get(key) {
                Some(e) => Ok(entry_broadcast(e, e.parse_list()?, len)?),
                None => base_val.ok_or_else(|| ConfigError::MissingKey { key: key.into() }.into()),
            }
        };
        let lower = vec_f64(
            "grid.lower",
            "lower",
            &ov.lower,
            base.as_ref().map(|b| b.lower.clone()),
            n,
        )?;
        let upper = vec_f64(
            "grid.upper",
            "upper",
            &ov.upper,
            base.as_ref().map(|b| b.upper.clone()),
            n,
        )?;
        let counts: Vec<usize> = if let Some(t) = &ov.counts {
            broadcast(parse_flag_list("counts", t)?, n, "counts").map_err(|m| flag_error("counts", m))?
        } else {
            match doc.get("grid.counts") {
                Some(e) => entry_broadcast(e, e.parse_list()?, n)?,
                None => base.as_ref().map(|b| b.counts.clone()).ok_or_else(|| {
                    CliError::from(ConfigError::MissingKey {
                        key: "grid.counts".into(),
                    })
                })?,
            }
        };
        let u_max = vec_f64(
            "controls.u_max",
            "u-max",
            &ov.u_max,
            base.as_ref().map(|b| b.controls.u_max().to_vec()),
            m,
        )?;
        let samples = ov
            .samples
            .or(doc.parse_value("controls.samples")?)
            .or(base.as_ref().map(|b| b.controls.samples_per_axis()))
            .unwrap_or(5);

        let base_solver = base.as_ref().map_or_else(SolverParams::default, |b| b.params);
        let integrator = match (&ov.integrator, doc.get("solver.integrator")) {
            (Some(s), _) => s.parse::<Integrator>().map_err(|e| flag_error("integrator", e))?,
            (None, Some(e)) => e.parse::<Integrator>()?,
            (None, None) => base_solver.integrator,
        };
        let solver = SolverParams {
            dt: ov.dt.or(doc.parse_value("solver.dt")?).unwrap_or(base_solver.dt),
            tol: ov.tol.or(doc.parse_value("solver.tol")?).unwrap_or(base_solver.tol),
            max_sweeps: ov
                .max_sweeps
                .or(doc.parse_value("solver.max_sweeps")?)
                .unwrap_or(base_solver.max_sweeps),
            integrator,
        };

        let layer_default = LayerParams::default();
        let seed = ov.seed.or(doc.parse_value("seed")?).unwrap_or(0);
        let certify = CertifyParams {
            eps_lvl: ov.eps_lvl.or(doc.parse_value("certify.eps_lvl")?).unwrap_or(0.05),
            margin: doc.parse_value("certify.margin")?.unwrap_or(0.0),
            domain_eps_lvl: doc.parse_value("certify.domain_eps_lvl")?.unwrap_or(0.01),
            boundary_eps_lvl: doc.parse_value("certify.boundary_eps_lvl")?.unwrap_or(1e-4),
            layer: LayerParams {
                epsilon: doc
                    .parse_value("certify.layer_epsilon")?
                    .unwrap_or(layer_default.epsilon),
                alpha0: doc.parse_value("certify.alpha0")?.unwrap_or(layer_default.alpha0),
                margin_c: doc.parse_value("certify.margin_c")?.unwrap_or(layer_default.margin_c),
                jitter: doc.parse_value("certify.jitter")?.unwrap_or(layer_default.jitter),
                seed,
            },
            threshold: ov.threshold.or(doc.parse_value("certify.threshold")?).unwrap_or(0.99),
        };
        let sim_default = SimParams::default();
        let sim = SimParams {
            horizon: ov
                .horizon
                .or(doc.parse_value("sim.horizon")?)
                .unwrap_or(sim_default.horizon),
            dt_sim: ov
                .dt_sim
                .or(doc.parse_value("sim.dt_sim")?)
                .unwrap_or(sim_default.dt_sim),
            delta_conv: ov
                .delta_conv
                .or(doc.parse_value("sim.delta_conv")?)
                .unwrap_or(sim_default.delta_conv),
        };
        let x0 = match (&ov.x0, doc.get("sim.x0")) {
            (Some(t), _) => Some(parse_flag_list::<f64>("x0", t)?),
            (None, Some(e)) => Some(e.parse_list::<f64>()?),
            (None, None) => None,
        };
        let batch = BatchParams {
            eps_lvl: ov.batch_eps_lvl.or(doc.parse_value("batch.eps_lvl")?).unwrap_or(0.2),
            jitter: ov.jitter.or(doc.parse_value("batch.jitter")?).unwrap_or(0),
            threshold: doc.parse_value("batch.threshold")?.unwrap_or(0.99),
            worst: doc.parse_value("batch.worst")?.unwrap_or(5),
        };
        let out = ov
            .out
            .clone()
            .or_else(|| doc.get("output.dir").map(|e| PathBuf::from(&e.value)))
            .unwrap_or_else(|| PathBuf::from("out").join(benchmark.map_or(system.name(), |b| b.name())));

        let cfg = Self {
            benchmark,
            system,
            safe,
            cost,
            transform,
            lower,
            upper,
            counts,
            u_max,
            samples,
            solver,
            certify,
            sim,
            x0,
            batch,
            seed,
            workers: ov.workers,
            out,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.solver.max_sweeps == 0 {
            return bad("max_sweeps must be at least 1".into());
        }
        self.grid()?;
        self.controls()?;
        let c = &self.certify;
        for (name, v) in [
            ("certify.eps_lvl", c.eps_lvl),
            ("certify.domain_eps_lvl", c.domain_eps_lvl),
            ("certify.boundary_eps_lvl", c.boundary_eps_lvl),
            ("batch.eps_lvl", self.batch.eps_lvl),
            ("certify.margin", c.margin),
            ("certify.threshold", c.threshold),
            ("batch.threshold", self.batch.threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if !(c.layer.epsilon > 0.0 && c.layer.alpha0 > 0.0 && c.layer.margin_c > 0.0) {
            return bad("certify.layer_epsilon, certify.alpha0 and certify.margin_c must be positive".into());
        }
        if !(self.sim.dt_sim > 0.0 && self.sim.horizon >= 0.0 && self.sim.delta_conv > 0.0) {
            return bad("need sim.dt_sim > 0, sim.horizon >= 0 and sim.delta_conv > 0".into());
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.system.state_dim() || !x0.iter().all(|v| v.is_finite()) {
                return bad(format!("x0 needs {} finite values", self.system.state_dim()));
            }
        }
        if self.workers == Some(0) {
            return bad("--workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<Grid>, CliError> {
        Grid::build(&self.lower, &self.upper, &self.counts, &self.safe)
            .map(Arc::new)
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn controls(&self) -> Result<ControlSet, CliError> {
        ControlSet::new(&self.u_max, self.samples).map_err(|e| CliError::Config(format!("controls: {e}")))
    }

    pub fn solver(&self) -> Result<ZubovSolver, CliError> {
        ZubovSolver::new(
            self.system.clone(),
            self.safe.clone(),
            self.cost.clone(),
            self.transform,
            self.controls()?,
            self.solver,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match self.workers {
            Some(n) => clbf_core::solver::with_workers(n, f),
            None => f(),
        }
    }

    pub fn field_path(&self) -> PathBuf {
        self.out.join("field.csv")
    }

    /// The effective configuration in the config-file schema; loading it
    /// back reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self.benchmark {
            Some(b) => writeln!(s, "benchmark = {b}").unwrap(),
            None => s.push_str(&serialize_system(&self.system, &self.safe)),
        }
        let c = &self.certify;
        let lines: Vec<(&str, String)> = vec![
            ("grid.lower", list_text(&self.lower)),
            ("grid.upper", list_text(&self.upper)),
            ("grid.counts", list_text(&self.counts)),
            ("controls.u_max", list_text(&self.u_max)),
            ("controls.samples", self.samples.to_string()),
            ("cost.theta", format!("{:?}", self.cost.theta())),
            ("cost.Q", list_text(self.cost.q())),
            ("cost.R", list_text(self.cost.r())),
            ("cost.k", format!("{:?}", self.cost.k())),
            (
                "cost.barrier_on",
                if self.cost.barrier_on() { "on" } else { "off" }.into(),
            ),
            ("transform.alpha", format!("{:?}", self.transform.alpha())),
            ("solver.dt", format!("{:?}", self.solver.dt)),
            ("solver.tol", format!("{:?}", self.solver.tol)),
            ("solver.max_sweeps", self.solver.max_sweeps.to_string()),
            (
                "solver.integrator",
                format!("{:?}", self.solver.integrator).to_lowercase(),
            ),
            ("certify.eps_lvl", format!("{:?}", c.eps_lvl)),
            ("certify.margin", format!("{:?}", c.margin)),
            ("certify.domain_eps_lvl", format!("{:?}", c.domain_eps_lvl)),
            ("certify.boundary_eps_lvl", format!("{:?}", c.boundary_eps_lvl)),
            ("certify.layer_epsilon", format!("{:?}", c.layer.epsilon)),
            ("certify.alpha0", format!("{:?}", c.layer.alpha0)),
            ("certify.margin_c", format!("{:?}", c.layer.margin_c)),
            ("certify.jitter", c.layer.jitter.to_string()),
            ("certify.threshold", format!("{:?}", c.threshold)),
            ("sim.horizon", format!("{:?}", self.sim.horizon)),
            ("sim.dt_sim", format!("{:?}", self.sim.dt_sim)),
            ("sim.delta_conv", format!("{:?}", self.sim.delta_conv)),
            ("batch.eps_lvl", format!("{:?}", self.batch.eps_lvl)),
            ("batch.jitter", self.batch.jitter.to_string()),
            ("batch.threshold", format!("{:?}", self.batch.threshold)),
            ("batch.worst", self.batch.worst.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        if let Some(x0) = &self.x0 {
            writeln!(s, "sim.x0 = {}", list_text(x0)).unwrap();
        }
        s
    }
}
