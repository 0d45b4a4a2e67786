//! Executes prepared experiments and writes their artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use subvar_core::gammalab::{
    effective_integrand, effective_matrix, hconvergence_experiment, homogenization_experiment,
    pointwise_gamma_experiment, CellSetup, ConvergenceReport,
};
use subvar_core::integrand::{
    check_convexity, check_gradient, check_growth, check_hoelder_gradient, check_local_lipschitz, check_lower_growth,
    Aux,
};
use subvar_core::solver::poincare_constant;
use subvar_core::{DiscreteField, DiscreteXOperator, Frame, FrameKind, GradientField, Grid, GroupPoint, HAffine};

use crate::build::{affine_exact, prepare, Plan, Prepared};
use crate::config::{base_dir, ConfigErrors, ExperimentConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    #[serde(default)]
    pub label: Option<f64>,
    pub status: String,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub kind: String,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    pub config_path: String,
    pub started: String,
    pub finished: String,
    /// `ok`, `partial`, `checks-failed` or `solver-failure`.
    pub status: String,
    #[serde(default)]
    pub label_name: Option<String>,
    #[serde(default)]
    pub steps: Vec<StepRecord>,
    /// File names relative to the manifest's directory.
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigErrors),
    /// The manifest was written; the run itself failed.
    Solver(Box<RunManifest>, String),
    Io(anyhow::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "invalid configuration:\n{e}"),
            RunError::Solver(_, msg) => write!(f, "solver failure: {msg}"),
            RunError::Io(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for RunError {}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(..) => 3,
            RunError::Io(_) => 1,
        }
    }
}

/// Table cell; numbers are written with 17 significant digits.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub fn format_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub struct Outcome {
    pub label_name: Option<String>,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub report: Value,
    pub steps: Vec<StepRecord>,
    pub partial: bool,
    pub checks_failed: bool,
    pub notes: Vec<String>,
}

fn metrics<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn convergence_outcome(rep: ConvergenceReport, timing: bool) -> Outcome {
    let wt = |t: f64| if timing { t } else { 0.0 };
    let rows = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Num(r.label),
                Cell::Num(r.min_value),
                Cell::Num(r.l2_minimizer_err),
                Cell::Num(r.max_pairing_residual),
                Cell::Num(r.strong_momenta_dist),
                Cell::Num(wt(r.wall_time)),
                Cell::Num(r.rel_gap),
                Cell::Num(r.strong_gradient_dist),
                Cell::Num(r.center_value),
                Cell::Bool(r.converged),
                Cell::Int(r.iterations),
            ]
        })
        .collect();
    let mut steps = vec![StepRecord {
        name: "reference".into(),
        label: None,
        status: if rep.reference.converged { "ok" } else { "not-converged" }.into(),
        metrics: metrics([
            ("min_value", rep.reference.min_value),
            ("center_value", rep.reference.center_value),
        ]),
    }];
    for r in &rep.rows {
        steps.push(StepRecord {
            name: rep.experiment.clone(),
            label: Some(r.label),
            status: if r.converged { "ok" } else { "not-converged" }.into(),
            metrics: metrics([
                ("min_value", r.min_value),
                ("rel_gap", r.rel_gap),
                ("l2_minimizer_err", r.l2_minimizer_err),
                ("max_pairing_residual", r.max_pairing_residual),
                ("strong_momenta_dist", r.strong_momenta_dist),
            ]),
        });
    }
    let label = rep.label_name.clone();
    Outcome {
        header: vec![
            if label == "eps" { "eps" } else { "h" },
            "min_value",
            "l2_minimizer_err",
            "max_pairing_residual",
            "strong_momenta_dist",
            "wall_time",
            "rel_gap",
            "strong_gradient_dist",
            "center_value",
            "converged",
            "iterations",
        ],
        label_name: Some(label),
        rows,
        partial: rep.partial,
        checks_failed: false,
        notes: rep.notes.clone(),
        steps,
        report: serde_json::to_value(&rep).expect("report serializes"),
    }
}

struct Check {
    name: String,
    value: f64,
    tolerance: f64,
    passed: bool,
}

fn checks_outcome(checks: Vec<Check>, report: Value) -> Outcome {
    let failed = checks.iter().any(|c| !c.passed);
    Outcome {
        label_name: None,
        header: vec!["check", "value", "tolerance", "passed"],
        rows: checks
            .iter()
            .map(|c| vec![Cell::Text(c.name.clone()), Cell::Num(c.value), Cell::Num(c.tolerance), Cell::Bool(c.passed)])
            .collect(),
        steps: checks
            .iter()
            .map(|c| StepRecord {
                name: c.name.clone(),
                label: None,
                status: if c.passed { "pass" } else { "fail" }.into(),
                metrics: metrics([("value", c.value), ("tolerance", c.tolerance)]),
            })
            .collect(),
        report,
        partial: false,
        checks_failed: failed,
        notes: Vec::new(),
    }
}

/// Runs the experiment described by `p`.
pub fn execute(p: &Prepared, timing: bool) -> subvar_core::Result<Outcome> {
    let wt = |t: Instant| if timing { t.elapsed().as_secs_f64() } else { 0.0 };
    match &p.plan {
        Plan::Poincare { eig_tol } => {
            let start = Instant::now();
            let grid = p.grid.clone().expect("poincare needs a domain");
            let est = poincare_constant(grid, &p.frame, *eig_tol, &p.settings)?;
            let t = wt(start);
            Ok(Outcome {
                label_name: None,
                header: vec!["lambda", "iterations", "inner_iterations", "wall_time"],
                rows: vec![vec![
                    Cell::Num(est.lambda),
                    Cell::Int(est.iterations),
                    Cell::Int(est.inner_iterations),
                    Cell::Num(t),
                ]],
                steps: vec![StepRecord {
                    name: "poincare".into(),
                    label: None,
                    status: "ok".into(),
                    metrics: metrics([("lambda", est.lambda), ("iterations", est.iterations as f64)]),
                }],
                report: json!({ "lambda": est.lambda, "iterations": est.iterations,
                    "inner_iterations": est.inner_iterations, "eigenfield": est.eigenfield, "wall_time": t }),
                partial: false,
                checks_failed: false,
                notes: Vec::new(),
            })
        }
        Plan::Cell { f, etas, cell } => {
            let mut rows = Vec::new();
            let mut steps = Vec::new();
            let mut estimates = Vec::new();
            for (k, eta) in etas.iter().enumerate() {
                let est = effective_integrand(f, &p.frame, eta, cell)?;
                for (i, eps) in est.eps_list.iter().enumerate() {
                    rows.push(vec![
                        Cell::Int(k),
                        Cell::Num(*eps),
                        Cell::Num(est.values[i]),
                        Cell::Num(est.affine_bounds[i]),
                        Cell::Bool(est.converged[i]),
                        Cell::Int(est.iterations[i]),
                    ]);
                    steps.push(StepRecord {
                        name: format!("eta[{k}]"),
                        label: Some(*eps),
                        status: if est.converged[i] { "ok" } else { "not-converged" }.into(),
                        metrics: metrics([("value", est.values[i]), ("affine_bound", est.affine_bounds[i])]),
                    });
                }
                estimates.push(est);
            }
            let partial = estimates.iter().any(|e| e.partial);
            Ok(Outcome {
                label_name: Some("eps".into()),
                header: vec!["eta_index", "eps", "value", "affine_bound", "converged", "iterations"],
                rows,
                steps,
                report: serde_json::to_value(&estimates).expect("serializes"),
                partial,
                checks_failed: false,
                notes: resolution_notes(cell),
            })
        }
        Plan::EffectiveMatrix { f, cell } => {
            let em = effective_matrix(f, &p.frame, cell)?;
            let m = em.matrix.rows();
            let mut rows = Vec::new();
            for i in 0..m {
                for j in 0..m {
                    rows.push(vec![Cell::Int(i), Cell::Int(j), Cell::Num(em.matrix[(i, j)])]);
                }
            }
            let mut mt = BTreeMap::new();
            for (i, e) in em.eigenvalues.iter().enumerate() {
                mt.insert(format!("eigenvalue_{i}"), *e);
            }
            let mut notes = resolution_notes(cell);
            if !em.within_bounds {
                notes.push(format!("eigenvalues {:?} outside [{}, {}]", em.eigenvalues, em.c0, em.c1));
            }
            Ok(Outcome {
                label_name: None,
                header: vec!["i", "j", "a_ij"],
                rows,
                steps: vec![StepRecord {
                    name: "effective-matrix".into(),
                    label: None,
                    status: if em.within_bounds { "ok" } else { "out-of-bounds" }.into(),
                    metrics: mt,
                }],
                partial: em.partial,
                checks_failed: !em.within_bounds,
                report: serde_json::to_value(&em).expect("serializes"),
                notes,
            })
        }
        Plan::Homogenize(s) => {
            let mut out = convergence_outcome(homogenization_experiment(s)?, timing);
            if s.reference.is_none() {
                out.notes.extend(resolution_notes(&s.cell));
            }
            Ok(out)
        }
        Plan::Hconv(s) => Ok(convergence_outcome(hconvergence_experiment(s)?, timing)),
        Plan::GammaPointwise(s) => Ok(convergence_outcome(pointwise_gamma_experiment(s)?, timing)),
        Plan::Gradcheck {
            f,
            coefficients,
            hoelder,
            lower,
            samples,
        } => {
            let grid = p.grid.as_deref().expect("gradcheck needs a domain");
            let seed = p.settings.seed;
            let mut checks = Vec::new();
            let g = check_gradient(f.as_ref(), grid, *samples, seed);
            checks.push(Check {
                name: "gradient".into(),
                value: g.worst_error,
                tolerance: g.tolerance,
                passed: g.passed,
            });
            let gr = check_growth(f.as_ref(), grid, *samples, seed)?;
            checks.push(Check {
                name: "growth".into(),
                value: gr.worst_lower_margin.min(gr.worst_upper_margin),
                tolerance: 0.0,
                passed: gr.passed,
            });
            let c = check_convexity(f.as_ref(), grid, *samples, seed);
            checks.push(Check {
                name: "convexity".into(),
                value: c.worst_excess,
                tolerance: 1e-10,
                passed: c.passed,
            });
            let h = check_hoelder_gradient(f.as_ref(), hoelder.0, hoelder.1, &Aux::Const(0.0), grid, *samples, seed)?;
            checks.push(Check {
                name: "hoelder".into(),
                value: h.worst_ratio,
                tolerance: h.cbar,
                passed: h.passed,
            });
            let l = check_local_lipschitz(f.as_ref(), grid, *samples, seed);
            checks.push(Check {
                name: "lipschitz".into(),
                value: l.c2,
                tolerance: f64::INFINITY,
                passed: l.c2.is_finite(),
            });
            let mut report = json!({ "gradient": g, "growth": gr, "convexity": c, "hoelder": h, "lipschitz": l });
            if let Some(a) = coefficients {
                let r = a.check(grid.lo(), grid.hi(), *samples, seed);
                checks.push(Check {
                    name: "coefficient_bounds".into(),
                    value: r.min_rayleigh,
                    tolerance: 1e-12,
                    passed: r.passed,
                });
                report["coefficients"] = serde_json::to_value(&r).expect("serializes");
            }
            if let Some(g) = lower {
                let margin = check_lower_growth(g.as_ref(), grid, *samples, seed);
                checks.push(Check {
                    name: "lower_growth".into(),
                    value: margin,
                    tolerance: 1e-12,
                    passed: margin >= -1e-12,
                });
                report["lower_growth_margin"] = json!(margin);
            }
            Ok(checks_outcome(checks, report))
        }
        Plan::Propcheck { samples } => {
            let grid = p.grid.clone().expect("propcheck needs a domain");
            let checks = property_checks(&p.frame, grid, *samples, p.settings.seed)?;
            let report = Value::Array(
                checks
                    .iter()
                    .map(|c| json!({ "check": c.name, "value": c.value, "tolerance": c.tolerance, "passed": c.passed }))
                    .collect(),
            );
            Ok(checks_outcome(checks, report))
        }
    }
}

/// Periods of `y ↦ f(y, ·)` span `2ε` in x, i.e. `res·ε` cells of `(-1, 1)ⁿ`.
pub const MIN_CELLS_PER_PERIOD: f64 = 32.0;

fn resolution_notes(cell: &CellSetup) -> Vec<String> {
    let res = cell.res.iter().copied().min().unwrap_or(0) as f64;
    cell.eps_list
        .iter()
        .filter(|eps| res * **eps < MIN_CELLS_PER_PERIOD)
        .map(|eps| format!("cell eps {eps}: {} cells per period (< {MIN_CELLS_PER_PERIOD}); estimate may alias", res * eps))
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

fn property_checks(frame: &Frame, grid: std::sync::Arc<Grid>, samples: usize, seed: u64) -> subvar_core::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let n = frame.n();
    if let FrameKind::Heisenberg { s } = frame.kind() {
        let point = |rng: &mut ChaCha8Rng| {
            GroupPoint::new((0..2 * s + 1).map(|_| rng.random_range(-5.0..5.0)).collect()).expect("finite")
        };
        let (mut assoc, mut dil, mut red) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..samples {
            let (x, y, z) = (point(&mut rng), point(&mut rng), point(&mut rng));
            let l = x.mul(&y)?.mul(&z)?;
            let r = x.mul(&y.mul(&z)?)?;
            assoc = assoc.max(max_rel(l.coords(), r.coords()));
            let lambda = rng.random_range(0.1..10.0);
            let l = x.mul(&y)?.dilate(lambda)?;
            let r = x.dilate(lambda)?.mul(&y.dilate(lambda)?)?;
            dil = dil.max(max_rel(l.coords(), r.coords()));
            let k: Vec<i64> = (0..2 * s + 1).map(|_| rng.random_range(-4..=4)).collect();
            let (r0, _) = x.reduce();
            let (r1, _) = x.translate_even(&k)?.reduce();
            // opposite faces of the fundamental box are identified
            let d = r0
                .coords()
                .iter()
                .zip(r1.coords())
                .map(|(a, b)| {
                    let d = (a - b).abs();
                    d.min((d - 2.0).abs())
                })
                .fold(0.0, f64::max);
            red = red.max(d);
        }
        for (name, v) in [("associativity", assoc), ("dilation_automorphism", dil), ("reduction_invariance", red)] {
            checks.push(Check {
                name: name.into(),
                value: v,
                tolerance: 1e-12,
                passed: v <= 1e-12,
            });
        }
    }

    let xop = DiscreteXOperator::new(grid.clone(), frame)?;
    let m = xop.m();
    let mut adj = 0.0f64;
    for _ in 0..5 {
        let u = DiscreteField::new(grid.clone(), (0..grid.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let phi = GradientField::new(
            grid.clone(),
            m,
            (0..m * grid.cell_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let lhs = xop.apply_x(&u)?.inner(&phi)?;
        let xt = xop.apply_x_transpose(&phi)?;
        let rhs: f64 = xt
            .values()
            .iter()
            .zip(u.values())
            .zip(grid.node_weights())
            .map(|((a, b), w)| a * b * w)
            .sum();
        adj = adj.max(rel(lhs, rhs));
    }
    checks.push(Check {
        name: "adjoint".into(),
        value: adj,
        tolerance: 1e-12,
        passed: adj <= 1e-12,
    });

    if affine_exact(frame) {
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let eta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l = HAffine::new(eta.clone(), rng.random_range(-1.0..1.0));
            let u = DiscreteField::from_fn(grid.clone(), |x| l.eval(x).expect("dimension"));
            let g = xop.apply_x(&u)?;
            for c in 0..g.site_count() {
                for (a, b) in g.site(c).iter().zip(&eta) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        checks.push(Check {
            name: "affine_exactness".into(),
            value: worst,
            tolerance: 1e-13,
            passed: worst <= 1e-13,
        });
    }

    let coords = grid.node_coordinates();
    let lic = frame.lic_report(coords.chunks(n), 1e-12)?;
    checks.push(Check {
        name: "lic_degenerate_fraction".into(),
        value: lic.fraction_degenerate,
        tolerance: 1.0,
        passed: true,
    });
    Ok(checks)
}

fn zero_wall_times(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, x) in map.iter_mut() {
                if k == "wall_time" {
                    *x = json!(0.0);
                } else {
                    zero_wall_times(x);
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(zero_wall_times),
        _ => {}
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(Cell::render))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Loads, validates and runs a config file; `out` overrides `[output] dir`.
pub fn run_file(path: &Path, out: Option<&Path>) -> Result<RunManifest, RunError> {
    let bytes = std::fs::read(path).map_err(|e| RunError::Config(ConfigErrors(vec![format!("{}: {e}", path.display())])))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| RunError::Config(ConfigErrors(vec![format!("{}: not UTF-8", path.display())])))?;
    let cfg = crate::config::parse_str(&text).map_err(RunError::Config)?;
    let hash = hex(&Sha256::digest(&bytes));
    run(&cfg, &base_dir(path), out, &hash, &path.display().to_string())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(
    cfg: &ExperimentConfig,
    base: &Path,
    out: Option<&Path>,
    config_hash: &str,
    config_path: &str,
) -> Result<RunManifest, RunError> {
    let prepared = prepare(cfg, base).map_err(RunError::Config)?;
    let dir: PathBuf = match out {
        Some(o) => o.to_path_buf(),
        None => base.join(&cfg.output.dir),
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(RunError::Io)?;
    let mut manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.kind.name().into(),
        config_hash: config_hash.into(),
        config_path: config_path.into(),
        started: now(),
        finished: String::new(),
        status: String::new(),
        label_name: None,
        steps: Vec::new(),
        outputs: Vec::new(),
        notes: Vec::new(),
    };
    let manifest_path = dir.join("manifest.json");
    match execute(&prepared, cfg.output.timing) {
        Err(e) => {
            manifest.finished = now();
            manifest.status = "solver-failure".into();
            manifest.notes.push(e.to_string());
            manifest.outputs.push("manifest.json".into());
            write_json(&manifest_path, &manifest).map_err(RunError::Io)?;
            Err(RunError::Solver(Box::new(manifest), e.to_string()))
        }
        Ok(mut outcome) => {
            let csv_name = format!("{}.csv", cfg.kind.name());
            write_csv(&dir.join(&csv_name), &outcome.header, &outcome.rows).map_err(RunError::Io)?;
            if !cfg.output.timing {
                zero_wall_times(&mut outcome.report);
            }
            let report = json!({
                "kind": cfg.kind.name(),
                "config": cfg,
                "result": outcome.report,
            });
            write_json(&dir.join("report.json"), &report).map_err(RunError::Io)?;
            manifest.outputs = vec![csv_name, "report.json".into(), "manifest.json".into()];
            manifest.label_name = outcome.label_name;
            manifest.steps = outcome.steps;
            manifest.notes = outcome.notes;
            manifest.status = if outcome.partial {
                "partial"
            } else if outcome.checks_failed {
                "checks-failed"
            } else {
                "ok"
            }
            .into();
            manifest.finished = now();
            write_json(&manifest_path, &manifest).map_err(RunError::Io)?;
            if outcome.partial {
                let msg = "some sub-solves did not converge".to_string();
                return Err(RunError::Solver(Box::new(manifest), msg));
            }
            Ok(manifest)
        }
    }
}

/// Fixed-width table: one line per step, steps with labels sorted by label
/// (descending for ε sweeps, ascending otherwise).
pub fn summarize(manifest: &RunManifest) -> String {
    let mut out = format!("{:<24} {:>24} {:<14} {}\n", "step", "label", "status", "metrics");
    let mut steps: Vec<&StepRecord> = manifest.steps.iter().collect();
    let descending = manifest.label_name.as_deref() == Some("eps");
    steps.sort_by(|a, b| match (a.label, b.label) {
        (Some(x), Some(y)) if descending => y.total_cmp(&x),
        (Some(x), Some(y)) => x.total_cmp(&y),
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    for s in steps {
        let label = s.label.map(format_num).unwrap_or_else(|| "-".into());
        let metrics: Vec<String> = s.metrics.iter().map(|(k, v)| format!("{k}={}", format_num(*v))).collect();
        out += &format!("{:<24} {:>24} {:<14} {}\n", s.name, label, s.status, metrics.join(" "));
    }
    out
}

pub fn load_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(steps: Vec<StepRecord>, label: Option<&str>) -> RunManifest {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            tool: "subvar".into(),
            version: "0".into(),
            kind: "homogenize".into(),
            config_hash: String::new(),
            config_path: String::new(),
            started: String::new(),
            finished: String::new(),
            status: "ok".into(),
            label_name: label.map(Into::into),
            steps,
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn step(label: Option<f64>) -> StepRecord {
        StepRecord {
            name: "s".into(),
            label,
            status: "ok".into(),
            metrics: metrics([("min_value", 1.0)]),
        }
    }

    #[test]
    fn summary_shapes() {
        let empty = summarize(&manifest(Vec::new(), None));
        assert_eq!(empty.lines().count(), 1);
        assert!(empty.starts_with("step"));
        let one = summarize(&manifest(vec![step(None)], None));
        assert_eq!(one.lines().count(), 2);
        let many = summarize(&manifest(vec![step(Some(0.125)), step(None), step(Some(0.5)), step(Some(0.25))], Some("eps")));
        let labels: Vec<&str> = many.lines().skip(1).map(|l| l.split_whitespace().nth(1).unwrap()).collect();
        assert_eq!(labels, ["-", &format_num(0.5), &format_num(0.25), &format_num(0.125)]);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1.7320508075688772] {
            let s = format_num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let digits = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(digits.len(), 17);
        }
    }

    #[test]
    fn wall_times_are_zeroed_recursively() {
        let mut v = json!({"wall_time": 3.0, "rows": [{"wall_time": 1.0, "x": 2.0}]});
        zero_wall_times(&mut v);
        assert_eq!(v, json!({"wall_time": 0.0, "rows": [{"wall_time": 0.0, "x": 2.0}]}));
    }
}
