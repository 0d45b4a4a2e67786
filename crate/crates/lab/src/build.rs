//! Turns a parsed [`ExperimentConfig`] into core objects, collecting every error.

use std::path::Path;
use std::sync::Arc;

use subvar_core::gammalab::{
    check_eps_list, CellSetup, CoefficientFamily, HConvSetup, HomogenizationSetup, PointwiseSetup, TestFieldBattery,
};
use subvar_core::integrand::{LinearQuadratic, PPower, Quadratic};
use subvar_core::{
    Dirichlet, Frame, FrameKind, Grid, HAffine, Integrand, LowerOrderTerm, Matrix, OperatorCoefficients, ScalarField,
    SolverSettings,
};

use crate::config::{ConfigErrors, DirichletType, ExperimentConfig, Family, IntegrandSpec, IntegrandType, Kind};
use crate::expr::Expr;
use crate::table::CoefficientTable;

pub struct Prepared {
    pub kind: Kind,
    pub frame: Frame,
    pub grid: Option<Arc<Grid>>,
    pub settings: SolverSettings,
    pub plan: Plan,
}

pub enum Plan {
    Poincare {
        eig_tol: f64,
    },
    Cell {
        f: Arc<dyn Integrand>,
        etas: Vec<Vec<f64>>,
        cell: CellSetup,
    },
    EffectiveMatrix {
        f: Arc<dyn Integrand>,
        cell: CellSetup,
    },
    Homogenize(Box<HomogenizationSetup>),
    Hconv(Box<HConvSetup>),
    GammaPointwise(Box<PointwiseSetup>),
    Gradcheck {
        f: Arc<dyn Integrand>,
        coefficients: Option<OperatorCoefficients>,
        /// Declared Hölder exponent and constant of `∇_η f`.
        hoelder: (f64, f64),
        lower: Option<Arc<dyn LowerOrderTerm>>,
        samples: usize,
    },
    Propcheck {
        samples: usize,
    },
}

#[derive(Default)]
struct Errs(Vec<String>);

impl Errs {
    fn push(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.0.push(format!("{key}: {msg}"));
    }
}

const DEFAULT_SAMPLES: usize = 1000;

pub fn prepare(cfg: &ExperimentConfig, base: &Path) -> Result<Prepared, ConfigErrors> {
    let mut e = Errs::default();
    let settings = cfg.solver_settings();
    if let Err(err) = settings.validate() {
        e.push("solver", err);
    }
    let frame = build_frame(&cfg.frame, base, &mut e);
    let (n, m) = frame.as_ref().map_or((0, 0), |f| (f.n(), f.m()));

    let needs_domain = !matches!(cfg.kind, Kind::Cell | Kind::EffectiveMatrix);
    let grid = match (&cfg.domain, frame.is_some()) {
        (Some(d), true) => build_grid(&d.lo, &d.hi, &d.res, n, "domain", &mut e),
        (None, _) if needs_domain => {
            e.push("domain", "missing required section");
            None
        }
        _ => None,
    };

    let uses = |section: bool, name: &str, allowed: bool, e: &mut Errs| {
        if section && !allowed {
            e.push(name, format!("not used by kind `{}`", cfg.kind.name()));
        }
    };
    use Kind::*;
    uses(cfg.integrand.is_some(), "integrand", !matches!(cfg.kind, Poincare | Propcheck), &mut e);
    uses(cfg.limit.is_some(), "limit", cfg.kind == GammaPointwise, &mut e);
    uses(cfg.reference.is_some(), "reference", matches!(cfg.kind, Homogenize | Hconv), &mut e);
    uses(cfg.lower.is_some(), "lower", matches!(cfg.kind, Homogenize | Hconv | GammaPointwise | Gradcheck), &mut e);
    uses(cfg.dirichlet.is_some(), "dirichlet", matches!(cfg.kind, Homogenize | GammaPointwise), &mut e);

    let sweep = &cfg.sweep;
    let eps = sweep.eps.as_ref().map(|l| {
        if let Err(err) = check_eps_list("eps", l) {
            e.push("sweep.eps", err);
        }
        l.clone()
    });
    let cell_eps = sweep.cell_eps.as_ref().or(sweep.eps.as_ref()).cloned();
    if let Some(l) = &sweep.cell_eps {
        if let Err(err) = check_eps_list("cell_eps", l) {
            e.push("sweep.cell_eps", err);
        }
    }
    if let Some(h) = &sweep.h {
        if h.is_empty() || h.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            e.push("sweep.h", "must be a nonempty list of positive numbers");
        }
    }
    if let Some(t) = sweep.eig_tol {
        if !(t > 0.0 && t < 1.0) {
            e.push("sweep.eig_tol", "must lie in (0, 1)");
        }
    }
    if sweep.samples == Some(0) {
        e.push("sweep.samples", "must be at least 1");
    }
    let samples = sweep.samples.unwrap_or(DEFAULT_SAMPLES);
    let extras: Vec<Expr> = sweep
        .battery_extra
        .iter()
        .enumerate()
        .filter_map(|(i, s)| parse_expr(s, &format!("sweep.battery_extra[{i}]"), n, false, &mut e))
        .collect();

    let cell = |e: &mut Errs| -> Option<CellSetup> {
        let res = match &sweep.cell_res {
            Some(r) => r.clone(),
            None => {
                e.push("sweep.cell_res", "missing (needed for the cell problem)");
                return None;
            }
        };
        if res.len() != n || res.iter().any(|r| *r < 2) {
            e.push("sweep.cell_res", format!("needs {n} entries, each >= 2"));
            return None;
        }
        let Some(eps) = cell_eps.clone() else {
            e.push("sweep.cell_eps", "missing (give cell_eps or eps)");
            return None;
        };
        Some(CellSetup {
            res,
            eps_list: eps,
            settings: settings.clone(),
        })
    };
    let require_eps = |e: &mut Errs| -> Option<Vec<f64>> {
        if eps.is_none() {
            e.push("sweep.eps", "missing required key");
        }
        eps.clone()
    };

    let p_of = |spec: Option<&IntegrandSpec>| spec.and_then(|s| s.p).unwrap_or(2.0);
    let lower = |p: f64, e: &mut Errs| -> Option<Arc<dyn LowerOrderTerm>> {
        let spec = cfg.lower.as_ref()?;
        let ex = parse_expr(&spec.rhs, "lower.rhs", n, false, e)?;
        let rhs = sampled_field(&ex, grid.as_deref(), n);
        match LinearQuadratic::new(spec.mu, rhs, p) {
            Ok(g) => Some(Arc::new(g) as Arc<dyn LowerOrderTerm>),
            Err(err) => {
                e.push("lower", err);
                None
            }
        }
    };
    let dirichlet = |e: &mut Errs| -> Dirichlet {
        match &cfg.dirichlet {
            None => Dirichlet::Zero,
            Some(d) => match d.kind {
                DirichletType::Zero => {
                    if d.eta.is_some() || d.offset.is_some() {
                        e.push("dirichlet", "`eta` and `offset` apply to affine data only");
                    }
                    Dirichlet::Zero
                }
                DirichletType::Affine => match &d.eta {
                    Some(eta) if eta.len() == m && eta.iter().all(|v| v.is_finite()) => {
                        Dirichlet::Affine(HAffine::new(eta.clone(), d.offset.unwrap_or(0.0)))
                    }
                    _ => {
                        e.push("dirichlet.eta", format!("affine data need a finite slope with {m} entries"));
                        Dirichlet::Zero
                    }
                },
            },
        }
    };
    let battery = |p: f64| -> Option<TestFieldBattery> {
        if extras.is_empty() {
            return None;
        }
        let grid = grid.as_ref()?;
        let mut b = TestFieldBattery::default_for(grid, m, p);
        let q = p / (p - 1.0);
        for ex in &extras {
            for j in 0..m {
                let psi = subvar_core::GradientField::from_fn(grid.clone(), m, |x, out| {
                    out.fill(0.0);
                    out[j] = ex.eval(x, 0.0);
                });
                b.push(format!("({})*e{}", ex.source(), j + 1), psi, q);
            }
        }
        Some(b)
    };

    let integrand_req = |e: &mut Errs| -> Option<&IntegrandSpec> {
        if cfg.integrand.is_none() {
            e.push("integrand", "missing required section");
        }
        cfg.integrand.as_ref()
    };

    let plan = if frame.is_none() {
        None
    } else {
        match cfg.kind {
            Poincare => Some(Plan::Poincare {
                eig_tol: sweep.eig_tol.unwrap_or(1e-9),
            }),
            Cell => {
                let f = integrand_req(&mut e).and_then(|s| build_integrand(s, "integrand", n, m, None, &mut e));
                let etas = match &sweep.eta {
                    Some(l) if !l.is_empty() => {
                        if l.iter().any(|v| v.len() != m || v.iter().any(|a| !a.is_finite())) {
                            e.push("sweep.eta", format!("every slope needs {m} finite entries"));
                        }
                        l.clone()
                    }
                    _ => {
                        e.push("sweep.eta", "missing or empty");
                        Vec::new()
                    }
                };
                let cell = cell(&mut e);
                match (f, cell) {
                    (Some(f), Some(cell)) => Some(Plan::Cell { f, etas, cell }),
                    _ => None,
                }
            }
            EffectiveMatrix => {
                let spec = integrand_req(&mut e);
                if let Some(s) = spec {
                    if s.kind != IntegrandType::Quadratic {
                        e.push("integrand.type", "effective-matrix needs a quadratic integrand");
                    }
                }
                let f = spec.and_then(|s| build_integrand(s, "integrand", n, m, None, &mut e));
                match (f, cell(&mut e)) {
                    (Some(f), Some(cell)) => Some(Plan::EffectiveMatrix { f, cell }),
                    _ => None,
                }
            }
            Homogenize => {
                let spec = integrand_req(&mut e);
                let f = spec.and_then(|s| build_integrand(s, "integrand", n, m, None, &mut e));
                let reference = cfg
                    .reference
                    .as_ref()
                    .and_then(|s| build_integrand(s, "reference", n, m, None, &mut e));
                let quadratic = spec.is_some_and(|s| s.kind == IntegrandType::Quadratic);
                if cfg.reference.is_none() && spec.is_some() && !quadratic {
                    e.push("reference", "non-quadratic integrands need an explicit reference integrand");
                }
                let cell = if cfg.reference.is_none() {
                    cell(&mut e)
                } else {
                    Some(CellSetup::new(Vec::new(), Vec::new()))
                };
                let p = p_of(spec);
                let g = lower(p, &mut e);
                let dir = dirichlet(&mut e);
                let eps = require_eps(&mut e);
                match (f, cell, eps, &grid, cfg.reference.is_some() == reference.is_some()) {
                    (Some(f), Some(cell), Some(eps), Some(grid), true) => {
                        Some(Plan::Homogenize(Box::new(HomogenizationSetup {
                            frame: frame.clone().expect("frame checked"),
                            grid: grid.clone(),
                            integrand: f,
                            lower: g,
                            dirichlet: dir,
                            eps_list: eps,
                            cell,
                            reference,
                            battery: battery(p),
                            settings: settings.clone(),
                        })))
                    }
                    _ => None,
                }
            }
            Hconv => {
                let family = sweep.family.unwrap_or(Family::Periodic);
                let spec = integrand_req(&mut e);
                let (mu, rhs) = match &cfg.lower {
                    Some(l) => (
                        l.mu,
                        parse_expr(&l.rhs, "lower.rhs", n, false, &mut e).map(|ex| sampled_field(&ex, grid.as_deref(), n)),
                    ),
                    None => (0.0, Some(ScalarField::Const(0.0))),
                };
                if !(mu >= 0.0 && mu.is_finite()) {
                    e.push("lower.mu", "must be finite and nonnegative");
                }
                let fam = match family {
                    Family::Periodic => {
                        if cfg.reference.is_some() {
                            e.push("reference", "periodic families use the effective matrix as reference");
                        }
                        let profile = spec.and_then(|s| build_operator(s, "integrand", n, m, None, &mut e));
                        let eps = require_eps(&mut e);
                        match (profile, eps, cell(&mut e)) {
                            (Some(profile), Some(eps_list), Some(cell)) => Some(CoefficientFamily::Periodic {
                                profile,
                                eps_list,
                                cell,
                            }),
                            _ => None,
                        }
                    }
                    Family::Explicit => {
                        let hs = sweep.h.clone().unwrap_or_default();
                        if sweep.h.is_none() {
                            e.push("sweep.h", "explicit families need the list of indices h");
                        }
                        let reference = match &cfg.reference {
                            Some(s) => build_operator(s, "reference", n, m, None, &mut e),
                            None => {
                                e.push("reference", "explicit families need a reference operator");
                                None
                            }
                        };
                        let members: Option<Vec<_>> = spec.map(|s| {
                            hs.iter()
                                .filter_map(|h| build_operator(s, "integrand", n, m, Some(*h), &mut e).map(|a| (*h, a)))
                                .collect()
                        });
                        match (members, reference) {
                            (Some(members), Some(r)) if members.len() == hs.len() => Some(CoefficientFamily::Explicit {
                                members,
                                reference: Some(r),
                            }),
                            _ => None,
                        }
                    }
                };
                match (fam, rhs, &grid) {
                    (Some(family), Some(rhs), Some(grid)) => Some(Plan::Hconv(Box::new(HConvSetup {
                        frame: frame.clone().expect("frame checked"),
                        grid: grid.clone(),
                        family,
                        mu,
                        rhs,
                        battery: battery(2.0),
                        settings: settings.clone(),
                    }))),
                    _ => None,
                }
            }
            GammaPointwise => {
                let spec = integrand_req(&mut e);
                let hs = match &sweep.h {
                    Some(h) => h.clone(),
                    None => {
                        e.push("sweep.h", "missing required key");
                        Vec::new()
                    }
                };
                let seq: Option<Vec<(f64, Arc<dyn Integrand>)>> = spec.map(|s| {
                    hs.iter()
                        .filter_map(|h| build_integrand(s, "integrand", n, m, Some(*h), &mut e).map(|f| (*h, f)))
                        .collect()
                });
                let limit = match &cfg.limit {
                    Some(s) => build_integrand(s, "limit", n, m, None, &mut e),
                    None => {
                        e.push("limit", "missing required section");
                        None
                    }
                };
                if let (Some(a), Some(b)) = (spec, &cfg.limit) {
                    if p_of(Some(a)) != p_of(Some(b)) {
                        e.push("limit.p", "sequence and limit must share the exponent");
                    }
                }
                let p = p_of(cfg.limit.as_ref());
                let g = lower(p, &mut e);
                let dir = dirichlet(&mut e);
                match (seq, limit, &grid) {
                    (Some(sequence), Some(limit), Some(grid)) if sequence.len() == hs.len() && !hs.is_empty() => {
                        Some(Plan::GammaPointwise(Box::new(PointwiseSetup {
                            frame: frame.clone().expect("frame checked"),
                            grid: grid.clone(),
                            sequence,
                            limit,
                            lower: g,
                            dirichlet: dir,
                            battery: battery(p),
                            settings: settings.clone(),
                        })))
                    }
                    _ => None,
                }
            }
            Gradcheck => {
                let spec = integrand_req(&mut e);
                let f = spec.and_then(|s| build_integrand(s, "integrand", n, m, None, &mut e));
                let coefficients = spec
                    .filter(|s| s.kind == IntegrandType::Quadratic)
                    .and_then(|s| build_operator(s, "integrand", n, m, None, &mut Errs::default()));
                let g = lower(p_of(spec), &mut e);
                f.map(|f| {
                    let hoelder = declared_hoelder(f.as_ref(), spec.expect("integrand present"));
                    Plan::Gradcheck {
                        f,
                        coefficients,
                        hoelder,
                        lower: g,
                        samples,
                    }
                })
            }
            Propcheck => Some(Plan::Propcheck { samples }),
        }
    };

    if !e.0.is_empty() {
        return Err(ConfigErrors(e.0));
    }
    Ok(Prepared {
        kind: cfg.kind,
        frame: frame.expect("no errors"),
        grid,
        settings,
        plan: plan.expect("no errors"),
    })
}

/// `|∇f(η₁) - ∇f(η₂)| <= cbar |η₁-η₂|^α (|η₁|+|η₂|)^{p-1-α}`: `α = 1`, `cbar = c1`
/// for quadratics; for `c|η|^p`, `α = 1`, `cbar = p(p-1) sup c` when `p >= 2` and
/// `α = p-1`, `cbar = p 2^{2-p} sup c` when `p < 2`.
fn declared_hoelder(f: &dyn Integrand, spec: &IntegrandSpec) -> (f64, f64) {
    let p = f.exponent();
    let g = f.growth();
    match spec.kind {
        IntegrandType::Quadratic => (1.0, 2.0 * g.c1),
        IntegrandType::PPower => {
            let cmax = p * g.c1;
            if p >= 2.0 {
                (1.0, (p - 1.0) * cmax)
            } else {
                (p - 1.0, 2f64.powf(2.0 - p) * cmax)
            }
        }
    }
}

fn build_frame(tag: &str, base: &Path, e: &mut Errs) -> Option<Frame> {
    if let Some(path) = tag.strip_prefix("custom:") {
        let path = base.join(path.trim());
        return match CoefficientTable::load(&path).and_then(CoefficientTable::into_frame) {
            Ok(f) => Some(f),
            Err(err) => {
                e.push("frame", format!("{err:#}"));
                None
            }
        };
    }
    match Frame::from_tag(tag) {
        Ok(f) => Some(f),
        Err(err) => {
            e.push("frame", err);
            None
        }
    }
}

fn build_grid(lo: &[f64], hi: &[f64], res: &[usize], n: usize, key: &str, e: &mut Errs) -> Option<Arc<Grid>> {
    if lo.len() != n || hi.len() != n || res.len() != n {
        e.push(key, format!("lo, hi and res need {n} entries for this frame"));
        return None;
    }
    match Grid::new(lo, hi, res) {
        Ok(g) => Some(Arc::new(g)),
        Err(err) => {
            e.push(key, err);
            None
        }
    }
}

fn parse_expr(src: &str, key: &str, n: usize, allow_h: bool, e: &mut Errs) -> Option<Expr> {
    match Expr::parse(src, n, allow_h) {
        Ok(x) => Some(x),
        Err(err) => {
            e.push(key, format!("{err} in `{src}`"));
            None
        }
    }
}

/// Bounds are sampled at the grid nodes (the field only enters growth constants).
fn sampled_field(ex: &Expr, grid: Option<&Grid>, n: usize) -> ScalarField {
    if ex.is_constant_in_x() {
        return ScalarField::Const(ex.eval(&vec![0.0; n], 0.0));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    if let Some(g) = grid {
        for x in g.node_coordinates().chunks(n) {
            let v = ex.eval(x, 0.0);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 0.0);
    }
    let ex = ex.clone();
    ScalarField::function(move |x| ex.eval(x, 0.0), lo, hi).expect("ordered bounds")
}

fn scalar_coefficient(
    src: &str,
    bounds: Option<[f64; 2]>,
    key: &str,
    n: usize,
    h: Option<f64>,
    e: &mut Errs,
) -> Option<ScalarField> {
    let ex = parse_expr(src, &format!("{key}.coefficient"), n, h.is_some(), e)?;
    let hv = h.unwrap_or(0.0);
    if ex.is_constant_in_x() {
        let v = ex.eval(&vec![0.0; n], hv);
        if !v.is_finite() {
            e.push(&format!("{key}.coefficient"), format!("evaluates to {v}"));
            return None;
        }
        return Some(ScalarField::Const(v));
    }
    let Some([lo, hi]) = bounds else {
        e.push(&format!("{key}.bounds"), "required when the coefficient depends on x");
        return None;
    };
    match ScalarField::function(move |x| ex.eval(x, hv), lo, hi) {
        Ok(s) => Some(s),
        Err(err) => {
            e.push(&format!("{key}.bounds"), err);
            None
        }
    }
}

fn build_operator(spec: &IntegrandSpec, key: &str, n: usize, m: usize, h: Option<f64>, e: &mut Errs) -> Option<OperatorCoefficients> {
    if spec.kind != IntegrandType::Quadratic {
        e.push(&format!("{key}.type"), "an operator needs a quadratic integrand");
        return None;
    }
    if spec.p.is_some_and(|p| p != 2.0) {
        e.push(&format!("{key}.p"), "quadratic integrands have p = 2");
    }
    if let Some(rows) = &spec.matrix {
        if spec.coefficient.is_some() {
            e.push(key, "give either `coefficient` or `matrix`, not both");
            return None;
        }
        if rows.len() != m || rows.iter().any(|r| r.len() != m) {
            e.push(&format!("{key}.matrix"), format!("needs {m} rows of {m} entries"));
            return None;
        }
        let mut exprs = Vec::with_capacity(m * m);
        for (i, r) in rows.iter().enumerate() {
            for (j, s) in r.iter().enumerate() {
                exprs.push(parse_expr(s, &format!("{key}.matrix[{i}][{j}]"), n, h.is_some(), e)?);
            }
        }
        let hv = h.unwrap_or(0.0);
        let result = if exprs.iter().all(Expr::is_constant_in_x) {
            let zero = vec![0.0; n];
            let data = exprs.iter().map(|x| x.eval(&zero, hv)).collect();
            Matrix::from_row_major(m, m, data).and_then(OperatorCoefficients::constant)
        } else {
            let Some([c0, c1]) = spec.bounds else {
                e.push(&format!("{key}.bounds"), "required when the matrix depends on x");
                return None;
            };
            let f = move |x: &[f64], out: &mut [f64]| {
                for (o, ex) in out.iter_mut().zip(&exprs) {
                    *o = ex.eval(x, hv);
                }
            };
            OperatorCoefficients::function(m, Arc::new(f), c0, c1)
        };
        return match result {
            Ok(a) => Some(a),
            Err(err) => {
                e.push(&format!("{key}.matrix"), err);
                None
            }
        };
    }
    let src = spec.coefficient.as_deref().unwrap_or("1");
    let s = scalar_coefficient(src, spec.bounds, key, n, h, e)?;
    match OperatorCoefficients::scalar(m, s) {
        Ok(a) => Some(a),
        Err(err) => {
            e.push(&format!("{key}.coefficient"), err);
            None
        }
    }
}

fn build_integrand(spec: &IntegrandSpec, key: &str, n: usize, m: usize, h: Option<f64>, e: &mut Errs) -> Option<Arc<dyn Integrand>> {
    match spec.kind {
        IntegrandType::Quadratic => {
            build_operator(spec, key, n, m, h, e).map(|a| Arc::new(Quadratic::new(a)) as Arc<dyn Integrand>)
        }
        IntegrandType::PPower => {
            if spec.matrix.is_some() {
                e.push(&format!("{key}.matrix"), "p-power integrands take a scalar coefficient");
            }
            let p = match spec.p {
                Some(p) if p > 1.0 && p.is_finite() => p,
                Some(p) => {
                    e.push(&format!("{key}.p"), format!("must be finite and > 1, got {p}"));
                    return None;
                }
                None => {
                    e.push(&format!("{key}.p"), "missing (p-power integrands need p)");
                    return None;
                }
            };
            let src = spec.coefficient.as_deref().unwrap_or("1");
            let c = scalar_coefficient(src, spec.bounds, key, n, h, e)?;
            match PPower::new(m, c, p) {
                Ok(f) => Some(Arc::new(f)),
                Err(err) => {
                    e.push(key, err);
                    None
                }
            }
        }
    }
}

/// Affine exactness only holds for frames whose fields are coordinate derivatives
/// or left-invariant.
pub fn affine_exact(frame: &Frame) -> bool {
    matches!(frame.kind(), FrameKind::Euclidean | FrameKind::Heisenberg { .. })
}
