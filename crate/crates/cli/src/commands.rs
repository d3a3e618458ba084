use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clbf_core::certify::{
    check_clbf_conditions, check_compatibility_layer, check_positive_definite, classify_boundary, estimate_domain,
};
use clbf_core::feedback::{
    batch_verify as run_batch, descent_monitor, simulate as run_sim, ControlSource, Policy, SampleSpec, Verdict,
};
use clbf_core::{
    hex_digest, load_benchmark, BenchmarkId, Grid, NodeClass, SafeSet, SolveStatus, ValueField, ZubovSolver,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::artifacts::Artifacts;
use crate::run_config::RunConfig;
use crate::{CliError, SweepAxis};

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn provenance(cfg: &RunConfig) -> Value {
    let text = cfg.to_text();
    json!({ "config_sha256": hex_digest(text.as_bytes()), "text": text })
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let solver = cfg.solver()?;
    let grid = cfg.grid()?;
    let (field, stats) = cfg.run(|| solver.solve(grid.clone()))?;
    let csv = field.to_csv();
    let doc = json!({
        "status": stats.status,
        "stats": stats,
        "params_text": solver.params_text(&grid),
        "params_hash": solver.params_hash(&grid),
        "geometry_hash": grid.geometry_hash(cfg.transform.alpha()),
        "field_sha256": hex_digest(csv.as_bytes()),
        "config": provenance(cfg),
    });
    let mut out = Artifacts::new();
    out.add("field.csv", csv);
    out.add_json("stats.json", &doc)?;
    report(&out.commit(&cfg.out)?);
    println!(
        "{}: {:?} after {} sweeps, final change {:.3e}, median residual {:.3e}",
        solver.system.name(),
        stats.status,
        stats.sweeps,
        stats.final_change,
        stats.residual_summary.median
    );
    match stats.status {
        SolveStatus::Converged => Ok(()),
        SolveStatus::NotConverged => Err(CliError::NotConverged(format!(
            "no convergence within {} sweeps (last change {:.3e} > tol {:.3e})",
            stats.sweeps, stats.final_change, cfg.solver.tol
        ))),
    }
}

#[derive(Deserialize)]
struct StatsFile {
    status: SolveStatus,
    params_hash: String,
    field_sha256: String,
}

/// Loads a field and checks it against the configuration. A `stats.json`
/// next to the field, when present, must match this configuration and the
/// field contents; its status decides `converged`. Without one the field is
/// taken as converged.
fn load_field(cfg: &RunConfig, solver: &ZubovSolver, path: Option<PathBuf>) -> Result<ValueField, CliError> {
    let path = path.unwrap_or_else(|| cfg.field_path());
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read field {}: {e}", path.display())))?;
    let mut field =
        ValueField::from_csv(&text, &cfg.safe).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let expect = cfg.grid()?;
    let want = expect.geometry_hash(cfg.transform.alpha());
    let have = field.grid().geometry_hash(field.alpha());
    if want != have {
        return Err(CliError::Config(format!(
            "{} was computed on a different grid or alpha (geometry hash {have}, configuration gives {want})",
            path.display()
        )));
    }
    let stats_path = path.parent().unwrap_or(Path::new(".")).join("stats.json");
    if stats_path.exists() {
        let raw = std::fs::read_to_string(&stats_path)?;
        let stats: StatsFile =
            serde_json::from_str(&raw).map_err(|e| CliError::Config(format!("{}: {e}", stats_path.display())))?;
        let params_hash = solver.params_hash(&expect);
        if stats.params_hash != params_hash {
            return Err(CliError::Config(format!(
                "{} was solved with different parameters (params hash {}, configuration gives {params_hash})",
                path.display(),
                stats.params_hash
            )));
        }
        if stats.field_sha256 != hex_digest(text.as_bytes()) {
            return Err(CliError::Config(format!(
                "{} does not match the digest recorded in {}",
                path.display(),
                stats_path.display()
            )));
        }
        field.converged = stats.status == SolveStatus::Converged;
    }
    Ok(field)
}

fn unconstrained_twin(solver: &ZubovSolver) -> ZubovSolver {
    let mut u = solver.clone();
    u.safe = SafeSet::unconstrained(solver.state_dim());
    u.cost = u.cost.clone().with_barrier(false);
    u
}

pub fn certify(cfg: &RunConfig, field_path: Option<PathBuf>) -> Result<(), CliError> {
    let solver = cfg.solver()?;
    let field = load_field(cfg, &solver, field_path)?;
    if !field.converged {
        return Err(CliError::NotConverged(
            "the field did not converge; refusing to certify".into(),
        ));
    }
    let c = &cfg.certify;
    if c.threshold > 1.0 {
        eprintln!("warning: threshold {} is above 1 and can never be met", c.threshold);
    }
    let (decrease, level_sets, pd, layer, domain, boundary) = cfg.run(|| -> Result<_, CliError> {
        let (decrease, level_sets) = check_clbf_conditions(&field, &solver, c.eps_lvl, c.margin)?;
        let pd = check_positive_definite(&field);
        let layer = check_compatibility_layer(&field, &solver, c.eps_lvl, c.layer)?;
        let domain = estimate_domain(&field, c.domain_eps_lvl);
        let twin = unconstrained_twin(&solver);
        let grid_u = Arc::new(
            Grid::build(
                field.grid().lower(),
                field.grid().upper(),
                field.grid().counts(),
                &twin.safe,
            )
            .map_err(CliError::from)?,
        );
        let (field_u, _) = twin.solve(grid_u)?;
        let boundary = classify_boundary(&field, &field_u, &solver, c.boundary_eps_lvl)?;
        Ok((decrease, level_sets, pd, layer, domain, boundary))
    })?;
    let gated = [&decrease, &level_sets, &pd];
    let passed = gated.iter().all(|r| r.pass_fraction >= c.threshold);
    let doc = json!({
        "config": provenance(cfg),
        "params_hash": solver.params_hash(field.grid()),
        "passed": passed,
        "threshold": c.threshold,
        "decrease": decrease,
        "level_sets": level_sets,
        "positive_definite": pd,
        "compatibility_layer": layer,
        "domain": {
            "eps_lvl": c.domain_eps_lvl,
            "nodes": domain.size(),
            "volume": domain.volume(field.grid()),
        },
        "boundary": {
            "eps_lvl": c.boundary_eps_lvl,
            "near_s_boundary": boundary.near_s,
            "near_d0_boundary": boundary.near_d0,
            "unresolved": boundary.unresolved,
            "unresolved_fraction": boundary.unresolved_fraction(),
        },
    });
    let mut out = Artifacts::new();
    out.add_json("certify.json", &doc)?;
    report(&out.commit(&cfg.out)?);
    for r in gated.iter().chain([&&layer]) {
        println!("{:<22} {:>7.4} ({}/{})", r.name, r.pass_fraction, r.passed, r.total);
    }
    println!(
        "domain: {} nodes, volume {:.4}",
        domain.size(),
        domain.volume(field.grid())
    );
    println!(
        "frontier: {} near S, {} near D0, {} unresolved",
        boundary.near_s, boundary.near_d0, boundary.unresolved
    );
    if passed {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "certification below threshold {}",
            c.threshold
        )))
    }
}

fn parse_vector(flag: &str, text: &str, len: usize) -> Result<Vec<f64>, CliError> {
    let v = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("--{flag}: {e}")))?;
    if v.len() != len || !v.iter().all(|x| x.is_finite()) {
        return Err(CliError::Config(format!("--{flag} needs {len} finite values")));
    }
    Ok(v)
}

pub fn simulate(cfg: &RunConfig, constant_u: Option<&str>, field_path: Option<PathBuf>) -> Result<(), CliError> {
    let x0 = cfg
        .x0
        .clone()
        .ok_or_else(|| CliError::Config("simulate needs --x0 or sim.x0".into()))?;
    let solver = cfg.solver()?;
    let mut out = Artifacts::new();
    let (csv, record, monitor) = match constant_u {
        Some(text) => {
            let u = parse_vector("constant-u", text, cfg.system.input_dim())?;
            let rec = run_sim(&cfg.system, &cfg.safe, &ControlSource::Constant(u), &x0, None, cfg.sim)?;
            (rec.to_csv(None), rec, None)
        }
        None => {
            let field = load_field(cfg, &solver, field_path)?;
            if !field.converged {
                eprintln!("warning: the field did not converge");
            }
            let policy = Policy::new(&solver, &field)?;
            let rec = run_sim(
                &cfg.system,
                &cfg.safe,
                &ControlSource::Greedy(policy),
                &x0,
                None,
                cfg.sim,
            )?;
            let mon = descent_monitor(&field, &rec)?;
            (rec.to_csv(Some(&field)), rec, Some(mon))
        }
    };
    let doc = json!({
        "config": provenance(cfg),
        "trajectory_csv_sha256": hex_digest(csv.as_bytes()),
        "x0": x0,
        "verdict": record.verdict,
        "exit_time": if record.exit_time.is_finite() { json!(record.exit_time) } else { Value::Null },
        "peak_h": record.peak_h,
        "final_state": record.states.last(),
        "samples": record.times.len(),
        "max_w_increase": monitor,
        "sim": cfg.sim,
    });
    out.add("trajectory.csv", csv);
    out.add_json("trajectory.json", &doc)?;
    report(&out.commit(&cfg.out)?);
    println!("{} (peak h {:.4})", record.verdict.name(), record.peak_h);
    Ok(())
}

pub fn batch_verify(cfg: &RunConfig, field_path: Option<PathBuf>) -> Result<(), CliError> {
    let solver = cfg.solver()?;
    let field = load_field(cfg, &solver, field_path)?;
    if !field.converged {
        eprintln!("warning: the field did not converge");
    }
    let policy = Policy::new(&solver, &field)?;
    let b = &cfg.batch;
    let spec = if b.jitter == 0 {
        SampleSpec::Nodes
    } else {
        SampleSpec::Jittered {
            per_node: b.jitter,
            seed: cfg.seed,
        }
    };
    let r = cfg.run(|| run_batch(&policy, b.eps_lvl, spec, cfg.sim, b.worst))?;
    let mut out = Artifacts::new();
    out.add_json(
        "safety_report.json",
        &json!({
            "config": provenance(cfg),
            "params_hash": solver.params_hash(field.grid()),
            "report": r,
            "spec": spec,
            "threshold": b.threshold,
        }),
    )?;
    report(&out.commit(&cfg.out)?);
    if r.empty {
        eprintln!("warning: EMPTY: no start points with w <= {}", 1.0 - b.eps_lvl);
        return Ok(());
    }
    for v in Verdict::ALL {
        println!("{:<15} {:>6} ({:.4})", v.name(), r.count(v), r.fraction(v));
    }
    let unsafe_count = r.count(Verdict::Unsafe);
    if unsafe_count > 0 || r.reached_unsafe {
        return Err(CliError::Check(format!(
            "{unsafe_count} trajectories reached the unsafe set"
        )));
    }
    if r.fraction_safe_converged < b.threshold {
        return Err(CliError::Check(format!(
            "SAFE_CONVERGED fraction {:.4} below threshold {}",
            r.fraction_safe_converged, b.threshold
        )));
    }
    Ok(())
}

fn refine_count(c: usize, factor: f64) -> usize {
    ((c - 1) as f64 * factor).round() as usize + 1
}

fn refine_samples(s: usize, factor: f64) -> usize {
    let n = ((s - 1) as f64 * factor).round() as usize + 1;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// `dt * max |f + g u|` over nodes and controls, divided by the smallest
/// spacing.
fn cfl_ratio(solver: &ZubovSolver, grid: &Grid) -> f64 {
    let mut v = vec![0.0; grid.dim()];
    let mut speed: f64 = 0.0;
    for i in 0..grid.num_nodes() {
        if grid.class(i) == NodeClass::Unsafe {
            continue;
        }
        let x = grid.node(i);
        for u in solver.controls.iter() {
            solver.system.velocity(&x, u, &mut v);
            speed = speed.max(v.iter().map(|a| a * a).sum::<f64>().sqrt());
        }
    }
    let min_h = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    solver.params.dt * speed / min_h
}

pub fn sweep(cfg: &RunConfig, axis: SweepAxis, factors: &str) -> Result<(), CliError> {
    let factors = factors
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("--factors: {e}")))?;
    if factors.is_empty() || factors.iter().any(|f| !(*f >= 1.0 && f.is_finite())) {
        return Err(CliError::Config("--factors must be finite and at least 1".into()));
    }
    let mut csv = String::from(
        "factor,counts,samples,dt,status,sweeps,sup_change,median_residual,domain_volume,cfl_ratio,cfl_flag\n",
    );
    for &f in &factors {
        let mut c = cfg.clone();
        match axis {
            SweepAxis::Grid => {
                c.counts = c.counts.iter().map(|&n| refine_count(n, f)).collect();
                c.solver.dt /= f;
            }
            SweepAxis::Controls => c.samples = refine_samples(c.samples, f),
            SweepAxis::Dt => c.solver.dt /= f,
        }
        let solver = c.solver()?;
        let grid = c.grid()?;
        let cfl = cfl_ratio(&solver, &grid);
        let (field, st) = c.run(|| solver.solve(grid.clone()))?;
        let volume = estimate_domain(&field, c.certify.domain_eps_lvl).volume(&grid);
        let counts = c.counts.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";");
        writeln!(
            csv,
            "{f},{counts},{},{:?},{:?},{},{:e},{:e},{},{},{}",
            c.samples,
            c.solver.dt,
            st.status,
            st.sweeps,
            st.final_change,
            st.residual_summary.median,
            volume,
            cfl,
            cfl > 1.0
        )
        .unwrap();
        println!(
            "factor {f}: {:?} in {} sweeps, median residual {:.3e}, domain volume {:.4}, cfl {:.3}{}",
            st.status,
            st.sweeps,
            st.residual_summary.median,
            volume,
            cfl,
            if cfl > 1.0 {
                " (steps cross more than one cell)"
            } else {
                ""
            }
        );
    }
    let mut out = Artifacts::new();
    out.add_json(
        "sweep.json",
        &json!({
            "config": provenance(cfg),
            "axis": format!("{axis:?}").to_lowercase(),
            "factors": factors,
            "sweep_csv_sha256": hex_digest(csv.as_bytes()),
        }),
    )?;
    out.add("sweep.csv", csv);
    report(&out.commit(&cfg.out)?);
    Ok(())
}

pub fn bench_list() {
    for id in BenchmarkId::ALL {
        let b = load_benchmark(id);
        println!(
            "{:<20} n={} m={} grid={:?} h = {}",
            id.name(),
            b.system.state_dim(),
            b.system.input_dim(),
            b.counts,
            b.safe.h()
        );
    }
}
