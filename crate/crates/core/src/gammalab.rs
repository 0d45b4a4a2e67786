//! Limit experiments for oscillating functionals.
//!
//! * [`effective_integrand`]: cell estimate of the homogenized integrand `f₀(η)` by
//!   minimizing the rescaled energy over fields equal to `l_η` on `∂Q`, `Q = (-1,1)ⁿ`.
//! * [`effective_matrix`]: polarization of the cell estimates for quadratic integrands.
//! * [`homogenization_experiment`], [`hconvergence_experiment`],
//!   [`pointwise_gamma_experiment`]: sweeps comparing minima, minimizers and momenta
//!   with those of a known limit problem.
//!
//! Independent sub-solves run concurrently (with `std`); reports are assembled in
//! input order, so results do not depend on scheduling.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, HAffine};
use crate::integrand::{
    momentum_map, Growth, Integrand, LowerOrderTerm, OperatorCoefficients, PeriodicComposed, Quadratic,
    ScalarField,
};
use crate::math::{self, Matrix};
use crate::mesh::{self, Dirichlet, DiscreteField, DiscreteXOperator, GradientField, Grid};
use crate::par;
use crate::solver::{self, DiscreteProblem, SolveReport, SolverSettings};

/// Discretization of the cell problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSetup {
    /// Cells per axis on `Q = (-1, 1)ⁿ`.
    pub res: Vec<usize>,
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    pub settings: SolverSettings,
}

impl CellSetup {
    pub fn new(res: Vec<usize>, eps_list: Vec<f64>) -> Self {
        CellSetup {
            res,
            eps_list,
            settings: SolverSettings::default(),
        }
    }
}

/// Errors unless the list is nonempty, positive and strictly decreasing.
pub fn check_eps_list(what: &str, eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::Config(format!("{what} must not be empty")));
    }
    if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::Config(format!("{what} entries must be positive")));
    }
    if eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config(format!("{what} must be strictly decreasing")));
    }
    Ok(())
}

/// The default sweep `{1/4, 1/8, 1/16, 1/32, 1/64}`.
pub fn default_eps_list() -> Vec<f64> {
    vec![0.25, 0.125, 0.0625, 0.03125, 0.015625]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveIntegrandEstimate {
    pub eta: Vec<f64>,
    pub eps_list: Vec<f64>,
    /// `f₀^{(ε)}(η)` per ε.
    pub values: Vec<f64>,
    /// `(1/|Q|) Σ w f(reduce(δ_{1/ε} x), η)`: the energy of the affine competitor.
    pub affine_bounds: Vec<f64>,
    /// `|v_k - v_{k+1}|`.
    pub increments: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    /// Value at the smallest ε.
    pub extrapolated: f64,
    /// First-order Richardson estimate from the two smallest ε (three or more ε only).
    pub richardson: Option<f64>,
    pub cell_resolution: Vec<usize>,
    /// Some sub-solve did not converge.
    pub partial: bool,
}

impl EffectiveIntegrandEstimate {
    /// `c0|η|^p <= v <= c1|η|^p + sup a1` for every ε, up to `tol`.
    pub fn within_growth(&self, growth: &Growth, tol: f64) -> bool {
        let r = math::powf(math::norm(&self.eta), growth.p);
        self.values
            .iter()
            .all(|v| *v >= growth.c0 * r - tol && *v <= growth.c1 * r + growth.a1.sup() + tol)
    }

    /// Every value lies below the affine competitor energy, up to `tol`.
    pub fn below_affine_bound(&self, tol: f64) -> bool {
        self.values.iter().zip(&self.affine_bounds).all(|(v, b)| *v <= b + tol)
    }
}

struct CellJob {
    eta: usize,
    eps: f64,
}

struct CellOutcome {
    value: f64,
    bound: f64,
    converged: bool,
    iterations: usize,
}

fn cell_grid(frame: &Frame, res: &[usize]) -> Result<Arc<Grid>> {
    let n = frame.n();
    if res.len() != n {
        return Err(Error::Config(format!("cell resolution needs {n} entries, got {}", res.len())));
    }
    Ok(Arc::new(Grid::new(&vec![-1.0; n], &vec![1.0; n], res)?))
}

fn run_cells(f: &Arc<dyn Integrand>, frame: &Frame, etas: &[Vec<f64>], cell: &CellSetup) -> Result<Vec<EffectiveIntegrandEstimate>> {
    check_eps_list("cell eps_list", &cell.eps_list)?;
    cell.settings.validate()?;
    for eta in etas {
        if eta.len() != f.m() {
            return Err(Error::dim("slope eta", f.m(), eta.len()));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("slope eta must be finite".into()));
        }
    }
    let grid = cell_grid(frame, &cell.res)?;
    let xop = Arc::new(DiscreteXOperator::new(grid.clone(), frame)?);
    let volume = grid.volume();
    let sites = grid.site_coordinates();
    let n = grid.dim();

    let jobs: Vec<CellJob> = (0..etas.len())
        .flat_map(|e| cell.eps_list.iter().map(move |eps| CellJob { eta: e, eps: *eps }))
        .collect();
    let outcomes = par::map(&jobs, |job| -> Result<CellOutcome> {
        let eta = &etas[job.eta];
        let fe: Arc<dyn Integrand> = Arc::new(PeriodicComposed::new(f.clone(), frame, job.eps)?);
        let bound = grid.cell_volume()
            * (0..grid.cell_count()).map(|c| fe.eval(&sites[c * n..(c + 1) * n], eta)).sum::<f64>()
            / volume;
        let prob = DiscreteProblem::new(xop.clone(), fe, None, Dirichlet::Affine(HAffine::linear(eta.clone())))?;
        let rep = solver::solve(&prob, &cell.settings)?;
        Ok(CellOutcome {
            value: rep.min_value / volume,
            bound,
            converged: rep.converged,
            iterations: rep.iterations,
        })
    });

    let mut out = Vec::with_capacity(etas.len());
    let mut it = outcomes.into_iter();
    for eta in etas {
        let mut values = Vec::new();
        let mut affine_bounds = Vec::new();
        let mut converged = Vec::new();
        let mut iterations = Vec::new();
        for _ in &cell.eps_list {
            let o = it.next().expect("one outcome per job")?;
            values.push(o.value);
            affine_bounds.push(o.bound);
            converged.push(o.converged);
            iterations.push(o.iterations);
        }
        let k = values.len();
        let richardson = (k >= 3).then(|| {
            let (e0, e1) = (cell.eps_list[k - 2], cell.eps_list[k - 1]);
            (e0 * values[k - 1] - e1 * values[k - 2]) / (e0 - e1)
        });
        out.push(EffectiveIntegrandEstimate {
            eta: eta.clone(),
            eps_list: cell.eps_list.clone(),
            increments: values.windows(2).map(|w| (w[1] - w[0]).abs()).collect(),
            extrapolated: values[k - 1],
            partial: converged.iter().any(|c| !c),
            values,
            affine_bounds,
            converged,
            iterations,
            richardson,
            cell_resolution: cell.res.clone(),
        });
    }
    Ok(out)
}

/// Cell estimate of `f₀(η)` for an H-periodic (or, for non-Heisenberg frames,
/// 2-periodic) integrand, one minimization per ε.
pub fn effective_integrand(
    f: &Arc<dyn Integrand>,
    frame: &Frame,
    eta: &[f64],
    cell: &CellSetup,
) -> Result<EffectiveIntegrandEstimate> {
    Ok(run_cells(f, frame, &[eta.to_vec()], cell)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMatrix {
    pub matrix: Matrix,
    pub eigenvalues: Vec<f64>,
    /// Bounds of `a` (twice the growth constants of `½⟨aη,η⟩`).
    pub c0: f64,
    pub c1: f64,
    pub within_bounds: bool,
    /// Estimates for `e_i` (first `m`), then `e_i + e_j` for `i < j`.
    pub estimates: Vec<EffectiveIntegrandEstimate>,
    pub partial: bool,
}

/// `a_ij = f₀(e_i + e_j) - f₀(e_i) - f₀(e_j)` (so `a_ii = 2 f₀(e_i)`), symmetrized.
pub fn effective_matrix(f: &Arc<dyn Integrand>, frame: &Frame, cell: &CellSetup) -> Result<EffectiveMatrix> {
    let m = f.m();
    let mut probe = vec![0.0; m * m];
    if !f.quadratic_coefficients(&vec![0.0; frame.n()], &mut probe) {
        return Err(Error::Config("effective_matrix needs a quadratic integrand".into()));
    }
    let mut etas = Vec::new();
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        etas.push(e);
    }
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            e[j] = 1.0;
            etas.push(e);
            pairs.push((i, j));
        }
    }
    let estimates = run_cells(f, frame, &etas, cell)?;
    let mut a = Matrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = 2.0 * estimates[i].extrapolated;
    }
    for (k, (i, j)) in pairs.iter().enumerate() {
        let v = estimates[m + k].extrapolated - estimates[*i].extrapolated - estimates[*j].extrapolated;
        a[(*i, *j)] = v;
        a[(*j, *i)] = v;
    }
    let t = a.transpose();
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = 0.5 * (a[(i, j)] + t[(i, j)]);
        }
    }
    let eigenvalues = a.symmetric_eigenvalues();
    let g = f.growth();
    let (c0, c1) = (2.0 * g.c0, 2.0 * g.c1);
    let tol = 1e-8 * c1;
    let within_bounds = eigenvalues.iter().all(|e| *e >= c0 - tol && *e <= c1 + tol);
    Ok(EffectiveMatrix {
        matrix: a,
        eigenvalues,
        c0,
        c1,
        within_bounds,
        partial: estimates.iter().any(|e| e.partial),
        estimates,
    })
}

/// Site-sampled test fields, each of unit `L^{p'}` norm.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFieldBattery {
    pub labels: Vec<String>,
    pub fields: Vec<GradientField>,
}

impl TestFieldBattery {
    pub fn empty() -> Self {
        TestFieldBattery {
            labels: Vec::new(),
            fields: Vec::new(),
        }
    }

    /// Per component `j`: `e_j`, `x_i e_j`, `sin(πx_i) e_j`, `cos(πx_i) e_j` for every
    /// axis `i`, i.e. `3n + 1` fields per component.
    pub fn default_for(grid: &Arc<Grid>, m: usize, p: f64) -> Self {
        let q = p / (p - 1.0);
        let n = grid.dim();
        let mut b = Self::empty();
        for j in 0..m {
            b.push(format!("e{}", j + 1), field(grid, m, j, |_| 1.0), q);
            for i in 0..n {
                b.push(format!("x{}*e{}", i + 1, j + 1), field(grid, m, j, |x| x[i]), q);
            }
            for i in 0..n {
                b.push(format!("sin(pi x{})*e{}", i + 1, j + 1), field(grid, m, j, |x| math::sin(math::PI * x[i])), q);
                b.push(format!("cos(pi x{})*e{}", i + 1, j + 1), field(grid, m, j, |x| math::cos(math::PI * x[i])), q);
            }
        }
        b
    }

    /// Adds `psi` normalized to unit `L^q` norm; fields that vanish on the sites are skipped.
    pub fn push(&mut self, label: String, mut psi: GradientField, q: f64) {
        let norm = psi.lq_norm(q);
        if norm > 0.0 && norm.is_finite() {
            psi.scale(1.0 / norm);
            self.labels.push(label);
            self.fields.push(psi);
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

fn field(grid: &Arc<Grid>, m: usize, j: usize, f: impl Fn(&[f64]) -> f64) -> GradientField {
    GradientField::from_fn(grid.clone(), m, |x, out| {
        out.fill(0.0);
        out[j] = f(x);
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingResiduals {
    /// `|Σ w ⟨φ_seq - φ_ref, Ψ_k⟩|` per test field.
    pub residuals: Vec<f64>,
    pub max: f64,
    /// `‖φ_seq - φ_ref‖_{L²}` for contrast.
    pub strong_l2: f64,
}

pub fn weak_pairing_residual(
    phi_seq: &GradientField,
    phi_ref: &GradientField,
    battery: &TestFieldBattery,
) -> Result<PairingResiduals> {
    let diff = phi_seq.sub(phi_ref)?;
    let mut residuals = Vec::with_capacity(battery.len());
    for psi in &battery.fields {
        residuals.push(diff.inner(psi)?.abs());
    }
    Ok(PairingResiduals {
        max: residuals.iter().cloned().fold(0.0, f64::max),
        residuals,
        strong_l2: phi_seq.l2_distance(phi_ref)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// ε for periodic sweeps, the sequence index `h` otherwise.
    pub label: f64,
    pub min_value: f64,
    /// `|min - min_∞|`.
    pub min_gap: f64,
    /// `(min - min_∞) / |min_∞|` (signed).
    pub rel_gap: f64,
    pub l2_minimizer_err: f64,
    pub max_pairing_residual: f64,
    pub pairing_residuals: Vec<f64>,
    /// `‖momenta - momenta_∞‖_{L²}`.
    pub strong_momenta_dist: f64,
    /// `‖Xu - Xu_∞‖_{L²}`.
    pub strong_gradient_dist: f64,
    /// Minimizer value at the node nearest to the centre of the domain.
    pub center_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub min_value: f64,
    pub center_value: f64,
    pub converged: bool,
    pub effective_matrix: Option<EffectiveMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    /// "eps" or "h".
    pub label_name: String,
    pub rows: Vec<ConvergenceRow>,
    pub reference: ReferenceSummary,
    pub battery: Vec<String>,
    pub solves: Vec<SolveReport>,
    pub reference_solve: SolveReport,
    pub partial: bool,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    /// `|min - min_∞|` is nonincreasing along the rows up to the factor `1 + slack`.
    pub fn gap_trend_ok(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].min_gap <= (1.0 + slack) * w[0].min_gap + 1e-14)
    }

    pub fn l2_errors_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].l2_minimizer_err < w[0].l2_minimizer_err)
    }
}

struct Limit {
    report: SolveReport,
    field: DiscreteField,
    gradient: GradientField,
    momenta: GradientField,
}

fn solve_limit(prob: &DiscreteProblem, f: &dyn Integrand, settings: &SolverSettings) -> Result<Limit> {
    let report = solver::solve(prob, settings)?;
    let field = report.minimizer_field(prob.grid().clone())?;
    let gradient = prob.xop().apply_x(&field)?;
    let momenta = momentum_map(f, &gradient)?;
    Ok(Limit {
        report,
        field,
        gradient,
        momenta,
    })
}

fn compare(label: f64, step: &Limit, limit: &Limit, battery: &TestFieldBattery) -> Result<ConvergenceRow> {
    let min_inf = limit.report.min_value;
    let min = step.report.min_value;
    let pair = weak_pairing_residual(&step.momenta, &limit.momenta, battery)?;
    let grid = step.field.grid();
    Ok(ConvergenceRow {
        label,
        min_value: min,
        min_gap: (min - min_inf).abs(),
        rel_gap: if min_inf != 0.0 { (min - min_inf) / min_inf.abs() } else { min - min_inf },
        l2_minimizer_err: mesh::l2_nodal(grid, step.field.values(), limit.field.values()),
        max_pairing_residual: pair.max,
        pairing_residuals: pair.residuals,
        strong_momenta_dist: pair.strong_l2,
        strong_gradient_dist: step.gradient.l2_distance(&limit.gradient)?,
        center_value: step.field.values()[grid.center_node()],
        converged: step.report.converged,
        iterations: step.report.iterations,
        wall_time: step.report.wall_time,
    })
}

fn center(limit: &Limit) -> f64 {
    limit.field.values()[limit.field.grid().center_node()]
}

fn assemble(
    experiment: &str,
    label_name: &str,
    steps: Vec<(f64, Limit)>,
    limit: Limit,
    battery: &TestFieldBattery,
    effective_matrix: Option<EffectiveMatrix>,
    mut notes: Vec<String>,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::with_capacity(steps.len());
    let mut solves = Vec::with_capacity(steps.len());
    for (label, step) in &steps {
        rows.push(compare(*label, step, &limit, battery)?);
    }
    for (_, step) in steps {
        solves.push(step.report);
    }
    let mut partial = !limit.report.converged || rows.iter().any(|r| !r.converged);
    if let Some(em) = &effective_matrix {
        partial |= em.partial;
        if !em.within_bounds {
            notes.push(format!(
                "effective matrix eigenvalues {:?} outside [{}, {}]",
                em.eigenvalues, em.c0, em.c1
            ));
        }
    }
    Ok(ConvergenceReport {
        experiment: experiment.into(),
        label_name: label_name.into(),
        reference: ReferenceSummary {
            min_value: limit.report.min_value,
            center_value: center(&limit),
            converged: limit.report.converged,
            effective_matrix,
        },
        battery: battery.labels.clone(),
        rows,
        solves,
        reference_solve: limit.report,
        partial,
        notes,
    })
}

fn battery_or_default(battery: &Option<TestFieldBattery>, grid: &Arc<Grid>, m: usize, p: f64) -> TestFieldBattery {
    match battery {
        Some(b) => b.clone(),
        None => TestFieldBattery::default_for(grid, m, p),
    }
}

fn lower_order_notes(prob: &DiscreteProblem, frame: &Frame, settings: &SolverSettings) -> Vec<String> {
    let mut notes = Vec::new();
    let d0 = prob.lower_order().map_or(0.0, |g| g.growth().d0);
    if d0 < 0.0 {
        // Diagnostic only; it does not inherit the sweep's iteration cap.
        let own = SolverSettings {
            seed: settings.seed,
            ..SolverSettings::default()
        };
        let est = match solver::poincare_constant(prob.grid().clone(), frame, 1e-6, &own) {
            Ok(est) => est,
            Err(e) => {
                notes.push(format!("warning: well-posedness not checked, Poincaré estimate failed: {e}"));
                return notes;
            }
        };
        let wp = prob.well_posedness(Some(est.lambda));
        if !wp.ok {
            notes.push(format!(
                "warning: d0 = {} does not exceed -c0 c_Omega = {:?}",
                wp.d0, wp.threshold
            ));
        }
        if wp.surrogate {
            notes.push("warning: well-posedness uses the p = 2 Poincaré constant as a surrogate".into());
        }
    }
    notes
}

pub struct HomogenizationSetup {
    pub frame: Frame,
    /// Discretization of Ω.
    pub grid: Arc<Grid>,
    /// Periodic profile `f(y, η)`.
    pub integrand: Arc<dyn Integrand>,
    pub lower: Option<Arc<dyn LowerOrderTerm>>,
    pub dirichlet: Dirichlet,
    pub eps_list: Vec<f64>,
    pub cell: CellSetup,
    /// Limit integrand; required unless the profile is quadratic.
    pub reference: Option<Arc<dyn Integrand>>,
    pub battery: Option<TestFieldBattery>,
    pub settings: SolverSettings,
}

/// Minimizes `Σ w f(reduce(δ_{1/ε} x), Xu) + Σ w g(x, u)` for each ε and compares
/// with the limit problem driven by the effective integrand.
pub fn homogenization_experiment(setup: &HomogenizationSetup) -> Result<ConvergenceReport> {
    check_eps_list("eps_list", &setup.eps_list)?;
    setup.settings.validate()?;
    let xop = Arc::new(DiscreteXOperator::new(setup.grid.clone(), &setup.frame)?);
    let (f0, em): (Arc<dyn Integrand>, Option<EffectiveMatrix>) = match &setup.reference {
        Some(r) => (r.clone(), None),
        None => {
            let mut probe = vec![0.0; setup.integrand.m() * setup.integrand.m()];
            if !setup.integrand.quadratic_coefficients(&vec![0.0; setup.frame.n()], &mut probe) {
                return Err(Error::Config(
                    "homogenization of a non-quadratic integrand needs an explicit reference integrand".into(),
                ));
            }
            let em = effective_matrix(&setup.integrand, &setup.frame, &setup.cell)?;
            let a = OperatorCoefficients::constant(em.matrix.clone())?;
            (Arc::new(Quadratic::new(a)), Some(em))
        }
    };
    let limit_prob = DiscreteProblem::new(xop.clone(), f0.clone(), setup.lower.clone(), setup.dirichlet.clone())?;
    let notes = lower_order_notes(&limit_prob, &setup.frame, &setup.settings);
    let limit = solve_limit(&limit_prob, f0.as_ref(), &setup.settings)?;
    let battery = battery_or_default(&setup.battery, &setup.grid, xop.m(), f0.exponent());

    let steps = par::map(&setup.eps_list, |eps| -> Result<(f64, Limit)> {
        let fe = Arc::new(PeriodicComposed::new(setup.integrand.clone(), &setup.frame, *eps)?);
        let prob = DiscreteProblem::new(xop.clone(), fe.clone(), setup.lower.clone(), setup.dirichlet.clone())?;
        Ok((*eps, solve_limit(&prob, fe.as_ref(), &setup.settings)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    assemble("homogenize", "eps", steps, limit, &battery, em, notes)
}

#[derive(Clone, Debug)]
pub enum CoefficientFamily {
    /// `a^h(x) = a(reduce(δ_{1/ε_h} x))`; the limit is the effective matrix.
    Periodic {
        profile: OperatorCoefficients,
        eps_list: Vec<f64>,
        cell: CellSetup,
    },
    /// Labelled members with an explicit limit.
    Explicit {
        members: Vec<(f64, OperatorCoefficients)>,
        reference: Option<OperatorCoefficients>,
    },
}

pub struct HConvSetup {
    pub frame: Frame,
    pub grid: Arc<Grid>,
    pub family: CoefficientFamily,
    pub mu: f64,
    pub rhs: ScalarField,
    pub battery: Option<TestFieldBattery>,
    pub settings: SolverSettings,
}

/// Solves `μu + X^T(a^h Xu) = rhs`, `u = 0` on `∂Ω`, for each member and compares
/// solutions (strongly) and fluxes `a^h Xu_h` (weakly) with the limit operator.
pub fn hconvergence_experiment(setup: &HConvSetup) -> Result<ConvergenceReport> {
    setup.settings.validate()?;
    let xop = Arc::new(DiscreteXOperator::new(setup.grid.clone(), &setup.frame)?);
    let (members, reference, em, label_name) = match &setup.family {
        CoefficientFamily::Periodic { profile, eps_list, cell } => {
            check_eps_list("eps_list", eps_list)?;
            let prof: Arc<dyn Integrand> = Arc::new(Quadratic::new(profile.clone()));
            let em = effective_matrix(&prof, &setup.frame, cell)?;
            let members = eps_list
                .iter()
                .map(|e| Ok((*e, profile.periodic(&setup.frame, *e)?)))
                .collect::<Result<Vec<_>>>()?;
            (members, OperatorCoefficients::constant(em.matrix.clone())?, Some(em), "eps")
        }
        CoefficientFamily::Explicit { members, reference } => {
            let r = reference.clone().ok_or_else(|| {
                Error::Config("an explicit coefficient family needs a reference operator".into())
            })?;
            (members.clone(), r, None, "h")
        }
    };
    if members.is_empty() {
        return Err(Error::Config("coefficient family is empty".into()));
    }
    let linear = |a: OperatorCoefficients| {
        DiscreteProblem::linear(xop.clone(), a, setup.mu, setup.rhs.clone(), Dirichlet::Zero)
    };
    let limit_prob = linear(reference.clone())?;
    let f_ref = Quadratic::new(reference);
    let limit = solve_limit(&limit_prob, &f_ref, &setup.settings)?;
    let battery = battery_or_default(&setup.battery, &setup.grid, xop.m(), 2.0);
    let steps = par::map(&members, |(label, a)| -> Result<(f64, Limit)> {
        let prob = linear(a.clone())?;
        let f = Quadratic::new(a.clone());
        Ok((*label, solve_limit(&prob, &f, &setup.settings)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    assemble("hconv", label_name, steps, limit, &battery, em, Vec::new())
}

pub struct PointwiseSetup {
    pub frame: Frame,
    pub grid: Arc<Grid>,
    /// `(h, f_h)` pairs.
    pub sequence: Vec<(f64, Arc<dyn Integrand>)>,
    pub limit: Arc<dyn Integrand>,
    pub lower: Option<Arc<dyn LowerOrderTerm>>,
    pub dirichlet: Dirichlet,
    pub battery: Option<TestFieldBattery>,
    pub settings: SolverSettings,
}

/// Minimizes each `F_h + G` and the limit `F + G`; records minima and minimizer
/// distances.
pub fn pointwise_gamma_experiment(setup: &PointwiseSetup) -> Result<ConvergenceReport> {
    setup.settings.validate()?;
    if setup.sequence.is_empty() {
        return Err(Error::Config("integrand sequence is empty".into()));
    }
    let xop = Arc::new(DiscreteXOperator::new(setup.grid.clone(), &setup.frame)?);
    let limit_prob = DiscreteProblem::new(xop.clone(), setup.limit.clone(), setup.lower.clone(), setup.dirichlet.clone())?;
    let notes = lower_order_notes(&limit_prob, &setup.frame, &setup.settings);
    let limit = solve_limit(&limit_prob, setup.limit.as_ref(), &setup.settings)?;
    let battery = battery_or_default(&setup.battery, &setup.grid, xop.m(), setup.limit.exponent());
    let steps = par::map(&setup.sequence, |(h, f)| -> Result<(f64, Limit)> {
        let prob = DiscreteProblem::new(xop.clone(), f.clone(), setup.lower.clone(), setup.dirichlet.clone())?;
        Ok((*h, solve_limit(&prob, f.as_ref(), &setup.settings)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    assemble("gamma-pointwise", "h", steps, limit, &battery, None, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::LinearQuadratic;

    fn interval(res: usize) -> Arc<Grid> {
        Arc::new(Grid::new(&[0.0], &[1.0], &[res]).unwrap())
    }

    fn constant_quadratic(a: Matrix) -> Arc<dyn Integrand> {
        Arc::new(Quadratic::new(OperatorCoefficients::constant(a).unwrap()))
    }

    #[test]
    fn eps_list_validation() {
        assert!(check_eps_list("eps", &[0.5, 0.25]).is_ok());
        assert!(check_eps_list("eps", &[0.25, 0.5]).is_err());
        assert!(check_eps_list("eps", &[0.25, 0.25]).is_err());
        assert!(check_eps_list("eps", &[]).is_err());
        assert!(check_eps_list("eps", &[-1.0]).is_err());
    }

    #[test]
    fn constant_integrand_is_its_own_limit() {
        let f = constant_quadratic(Matrix::diagonal(&[2.0, 3.0]));
        let frame = Frame::euclidean(2).unwrap();
        let cell = CellSetup::new(vec![6, 6], vec![0.5, 0.25]);
        let est = effective_integrand(&f, &frame, &[1.0, -2.0], &cell).unwrap();
        for v in &est.values {
            assert!((v - 0.5 * (2.0 + 12.0)).abs() < 1e-12);
        }
        let zero = effective_integrand(&f, &frame, &[0.0, 0.0], &cell).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));

        let em = effective_matrix(&f, &frame, &cell).unwrap();
        assert!((em.matrix[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((em.matrix[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(em.matrix[(0, 1)].abs() < 1e-12);
        assert!(em.within_bounds);
    }

    #[test]
    fn richardson_needs_three_eps() {
        let f = constant_quadratic(Matrix::identity(1));
        let frame = Frame::euclidean(1).unwrap();
        let two = effective_integrand(&f, &frame, &[1.0], &CellSetup::new(vec![8], vec![0.5, 0.25])).unwrap();
        assert!(two.richardson.is_none());
        let three = effective_integrand(&f, &frame, &[1.0], &CellSetup::new(vec![8], vec![0.5, 0.25, 0.125])).unwrap();
        assert!((three.richardson.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_quadratic_effective_matrix_is_rejected() {
        let f: Arc<dyn Integrand> = Arc::new(crate::integrand::PPower::new(1, ScalarField::Const(1.0), 3.0).unwrap());
        let r = effective_matrix(&f, &Frame::euclidean(1).unwrap(), &CellSetup::new(vec![8], vec![0.5]));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn pairing_examples() {
        let g = interval(256);
        let battery = TestFieldBattery::default_for(&g, 1, 2.0);
        assert_eq!(battery.len(), 4);
        let zero = GradientField::zeros(g.clone(), 1);
        let r = weak_pairing_residual(&zero, &zero, &battery).unwrap();
        assert!(r.residuals.iter().all(|v| *v == 0.0));

        let s = GradientField::from_fn(g.clone(), 1, |x, o| o[0] = math::sin(8.0 * math::PI * x[0]));
        let mut one = TestFieldBattery::empty();
        one.push("1".into(), GradientField::constant(g.clone(), &[1.0]), 2.0);
        let r = weak_pairing_residual(&s, &zero, &one).unwrap();
        assert!(r.max < 1e-12);
        assert!((r.strong_l2 - 1.0 / math::sqrt(2.0)).abs() < 1e-3);
        // ∫ x sin(2πx/ε) dx = -ε/(2π) on (0, 1); midpoint error is O((h/ε)²)
        // ∫ x sin(2πx/ε) dx = -ε/(2π) on (0, 1)
        let mut lin = TestFieldBattery::empty();
        lin.push("x".into(), GradientField::from_fn(g.clone(), 1, |x, o| o[0] = x[0]), 2.0);
        let mut prev = f64::INFINITY;
        for eps in [0.25, 0.125, 0.0625] {
            let s = GradientField::from_fn(g.clone(), 1, |x, o| o[0] = math::sin(2.0 * math::PI * x[0] / eps));
            let r = weak_pairing_residual(&s, &zero, &lin).unwrap();
            let oracle = eps / (2.0 * math::PI) * math::sqrt(3.0);
            assert!((r.max - oracle).abs() < 1e-2 * oracle, "{} {}", r.max, oracle);
            assert!(r.max < prev);
            prev = r.max;
        }
    }

    #[test]
    fn pointwise_scaling_oracle() {
        let g = interval(64);
        let frame = Frame::euclidean(1).unwrap();
        let seq = [1.0, 2.0, 4.0]
            .iter()
            .map(|h| {
                let f: Arc<dyn Integrand> = Arc::new(Quadratic::new(
                    OperatorCoefficients::scalar(1, ScalarField::Const(1.0 + 1.0 / h)).unwrap(),
                ));
                (*h, f)
            })
            .collect();
        let setup = PointwiseSetup {
            frame,
            grid: g,
            sequence: seq,
            limit: constant_quadratic(Matrix::identity(1)),
            lower: Some(Arc::new(LinearQuadratic::new(0.0, ScalarField::Const(1.0), 2.0).unwrap())),
            dirichlet: Dirichlet::Zero,
            battery: None,
            settings: SolverSettings::default(),
        };
        let rep = pointwise_gamma_experiment(&setup).unwrap();
        for row in &rep.rows {
            assert!((row.rel_gap - 1.0 / (row.label + 1.0)).abs() < 1e-8, "{row:?}");
        }
        assert!(rep.l2_errors_decreasing());
    }

    #[test]
    fn hconv_zero_solution() {
        let g = interval(32);
        let s = ScalarField::function(|y: &[f64]| 2.0 + math::sin(2.0 * math::PI * y[0]), 1.0, 3.0).unwrap();
        let setup = HConvSetup {
            frame: Frame::euclidean(1).unwrap(),
            grid: g,
            family: CoefficientFamily::Periodic {
                profile: OperatorCoefficients::scalar(1, s).unwrap(),
                eps_list: vec![0.25, 0.125],
                cell: CellSetup::new(vec![64], vec![0.125]),
            },
            mu: 1.0,
            rhs: ScalarField::Const(0.0),
            battery: None,
            settings: SolverSettings::default(),
        };
        let rep = hconvergence_experiment(&setup).unwrap();
        for row in &rep.rows {
            assert_eq!(row.l2_minimizer_err, 0.0);
            assert_eq!(row.max_pairing_residual, 0.0);
        }
    }

    #[test]
    fn explicit_family_needs_reference() {
        let setup = HConvSetup {
            frame: Frame::euclidean(1).unwrap(),
            grid: interval(8),
            family: CoefficientFamily::Explicit {
                members: vec![(1.0, OperatorCoefficients::identity(1))],
                reference: None,
            },
            mu: 0.0,
            rhs: ScalarField::Const(1.0),
            battery: None,
            settings: SolverSettings::default(),
        };
        assert!(matches!(hconvergence_experiment(&setup), Err(Error::Config(_))));
    }
}
