//! Discrete Dirichlet problems `min Σ w f(x, Xu) + Σ w g(x, u)` over nodal fields
//! with prescribed boundary values: assembly, preconditioned conjugate gradients for
//! the quadratic case, L-BFGS for general convex integrands, the discrete Poincaré
//! constant and the coercivity estimate built on it.
//!
//! Unknowns are the interior nodes in increasing (lexicographic) order. All
//! reductions inside a solve are sequential, so reports are bitwise reproducible.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::integrand::{Integrand, LowerOrderTerm, OperatorCoefficients, Quadratic};
use crate::math;
use crate::mesh::{DiscreteField, DiscreteXOperator, Grid};
pub use crate::mesh::Dirichlet;
use crate::par::Stopwatch;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Relative residual (CG) or scaled gradient norm (L-BFGS) at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of stored quasi-Newton pairs.
    pub memory: usize,
    /// Jacobi preconditioning in CG.
    pub preconditioner: bool,
    /// Seed for randomized probes.
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-10,
            max_iter: 20_000,
            memory: 10,
            preconditioner: true,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Config(format!("solver tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be at least 1".into()));
        }
        if self.memory == 0 {
            return Err(Error::Config("solver memory must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    /// Nodal values of the minimizer, lexicographic with axis 0 fastest.
    pub minimizer: Vec<f64>,
    pub min_value: f64,
    pub iterations: usize,
    /// CG: relative residual. L-BFGS: dual gradient norm divided by `1 + |value|`.
    pub final_grad_norm: f64,
    pub tolerance: f64,
    pub converged: bool,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub value_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

impl SolveReport {
    pub fn minimizer_field(&self, grid: Arc<Grid>) -> Result<DiscreteField> {
        DiscreteField::new(grid, self.minimizer.clone())
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    xop: Arc<DiscreteXOperator>,
    f: Arc<dyn Integrand>,
    g: Option<Arc<dyn LowerOrderTerm>>,
    dirichlet: Dirichlet,
    phi: Vec<f64>,
    interior: Vec<usize>,
    site_x: Vec<f64>,
    node_x: Vec<f64>,
}

/// Outcome of [`DiscreteProblem::well_posedness`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellPosedness {
    pub d0: f64,
    pub c0: f64,
    /// `-c0 * c_Ω` when a Poincaré estimate was supplied.
    pub threshold: Option<f64>,
    pub ok: bool,
    /// The Poincaré estimate is the `p = 2` value used for another exponent.
    pub surrogate: bool,
}

impl DiscreteProblem {
    pub fn new(
        xop: Arc<DiscreteXOperator>,
        f: Arc<dyn Integrand>,
        g: Option<Arc<dyn LowerOrderTerm>>,
        dirichlet: Dirichlet,
    ) -> Result<Self> {
        if f.m() != xop.m() {
            return Err(Error::dim("integrand components vs frame", xop.m(), f.m()));
        }
        if let Some(sites) = f.sites() {
            if **sites != **xop.grid() {
                return Err(Error::GridMismatch("integrand is tied to the sites of another grid"));
            }
        }
        let grid = xop.grid().clone();
        let phi = dirichlet.nodal_values(&grid)?;
        Ok(DiscreteProblem {
            interior: grid.interior_nodes(),
            site_x: grid.site_coordinates(),
            node_x: grid.node_coordinates(),
            xop,
            f,
            g,
            dirichlet,
            phi,
        })
    }

    /// `½∫⟨a Xu, Xu⟩ + ∫(μu²/2 - r u)` with the given boundary datum.
    pub fn linear(
        xop: Arc<DiscreteXOperator>,
        a: OperatorCoefficients,
        mu: f64,
        rhs: crate::integrand::ScalarField,
        dirichlet: Dirichlet,
    ) -> Result<Self> {
        let g = crate::integrand::LinearQuadratic::new(mu, rhs, 2.0)?;
        Self::new(xop, Arc::new(Quadratic::new(a)), Some(Arc::new(g)), dirichlet)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.xop.grid()
    }
    pub fn xop(&self) -> &Arc<DiscreteXOperator> {
        &self.xop
    }
    pub fn integrand(&self) -> &Arc<dyn Integrand> {
        &self.f
    }
    pub fn lower_order(&self) -> Option<&Arc<dyn LowerOrderTerm>> {
        self.g.as_ref()
    }
    pub fn dirichlet(&self) -> &Dirichlet {
        &self.dirichlet
    }
    /// Nodal extension of the boundary datum.
    pub fn datum(&self) -> &[f64] {
        &self.phi
    }
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    fn site(&self, c: usize) -> &[f64] {
        let n = self.grid().dim();
        &self.site_x[c * n..(c + 1) * n]
    }

    fn node(&self, i: usize) -> &[f64] {
        let n = self.grid().dim();
        &self.node_x[i * n..(i + 1) * n]
    }

    /// True when both `f` and `g` admit the quadratic solver.
    pub fn is_quadratic(&self) -> bool {
        let m = self.xop.m();
        let mut a = vec![0.0; m * m];
        let f_ok = (0..self.grid().cell_count()).all(|c| self.f.quadratic_coefficients(self.site(c), &mut a));
        let g_ok = match &self.g {
            None => true,
            Some(g) => (0..self.grid().node_count()).all(|i| g.linear_quadratic(self.node(i)).is_some()),
        };
        f_ok && g_ok
    }

    /// Checks `d0 > -c0 c_Ω` when `d0 < 0`.
    pub fn well_posedness(&self, poincare: Option<f64>) -> WellPosedness {
        let c0 = self.f.growth().c0;
        let d0 = self.g.as_ref().map_or(0.0, |g| g.growth().d0);
        let threshold = poincare.map(|c| -c0 * c);
        let ok = d0 >= 0.0 || threshold.is_some_and(|t| d0 > t);
        WellPosedness {
            d0,
            c0,
            threshold,
            ok,
            surrogate: self.f.exponent() != 2.0 && poincare.is_some(),
        }
    }
}

/// Value and gradient of the discrete functional on the interior unknowns.
pub struct Functional<'a> {
    prob: &'a DiscreteProblem,
}

pub fn assemble_functional(prob: &DiscreteProblem) -> Functional<'_> {
    Functional { prob }
}

impl<'a> Functional<'a> {
    pub fn unknowns(&self) -> usize {
        self.prob.interior.len()
    }

    /// Full nodal field: datum on the boundary, `z` inside.
    pub fn embed(&self, z: &[f64]) -> Vec<f64> {
        let mut u = self.prob.phi.clone();
        for (k, &i) in self.prob.interior.iter().enumerate() {
            u[i] = z[k];
        }
        u
    }

    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.prob.interior.iter().map(|&i| u[i]).collect()
    }

    /// `Σ_sites w f(x, Xu) + Σ_nodes w g(x, u)` for a full nodal field.
    pub fn value_full(&self, u: &[f64]) -> f64 {
        let p = self.prob;
        let m = p.xop.m();
        let grid = p.grid();
        let mut xu = vec![0.0; m * grid.cell_count()];
        p.xop.apply_raw(u, &mut xu);
        let mut acc = 0.0;
        for c in 0..grid.cell_count() {
            acc += p.f.eval(p.site(c), &xu[c * m..(c + 1) * m]);
        }
        let mut total = grid.cell_volume() * acc;
        if let Some(g) = &p.g {
            let w = grid.node_weights();
            for i in 0..grid.node_count() {
                total += w[i] * g.eval(p.node(i), u[i]);
            }
        }
        total
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.value_full(&self.embed(z))
    }

    /// Writes the gradient with respect to the interior unknowns into `grad` and
    /// returns the value.
    pub fn value_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.prob;
        let m = p.xop.m();
        let grid = p.grid();
        let u = self.embed(z);
        let mut xu = vec![0.0; m * grid.cell_count()];
        p.xop.apply_raw(&u, &mut xu);
        let w = grid.cell_volume();
        let mut flux = vec![0.0; xu.len()];
        let mut acc = 0.0;
        for c in 0..grid.cell_count() {
            let eta = &xu[c * m..(c + 1) * m];
            acc += p.f.eval(p.site(c), eta);
            let out = &mut flux[c * m..(c + 1) * m];
            p.f.grad(p.site(c), eta, out);
            out.iter_mut().for_each(|v| *v *= w);
        }
        let mut value = w * acc;
        let mut full = vec![0.0; grid.node_count()];
        p.xop.transpose_raw(&flux, &mut full);
        if let Some(g) = &p.g {
            let wn = grid.node_weights();
            for i in 0..grid.node_count() {
                let x = p.node(i);
                value += wn[i] * g.eval(x, u[i]);
                full[i] += wn[i] * g.dgrad(x, u[i]);
            }
        }
        for (k, &i) in p.interior.iter().enumerate() {
            grad[k] = full[i];
        }
        value
    }
}

/// `K = Σ_cells w Bᵀ a B` over all nodes, with `a` supplied per cell centre.
pub fn assemble_stiffness(xop: &DiscreteXOperator, coeff: impl Fn(&[f64], &mut [f64])) -> CsrMatrix {
    let grid = xop.grid();
    let m = xop.m();
    let nc = xop.corner_count();
    let w = grid.cell_volume();
    let mut b = vec![0.0; m * nc];
    let mut a = vec![0.0; m * m];
    let mut ab = vec![0.0; m * nc];
    let mut x = vec![0.0; grid.dim()];
    let mut nodes = vec![0usize; nc];
    let mut triplets = Vec::with_capacity(grid.cell_count() * nc * nc);
    for c in 0..grid.cell_count() {
        grid.cell_center(c, &mut x);
        coeff(&x, &mut a);
        xop.local_block(c, &mut b);
        for i in 0..m {
            for k in 0..nc {
                let mut s = 0.0;
                for j in 0..m {
                    s += a[i * m + j] * b[j * nc + k];
                }
                ab[i * nc + k] = s;
            }
        }
        for (slot, node) in nodes.iter_mut().zip(xop.cell_nodes(c)) {
            *slot = node;
        }
        for k in 0..nc {
            for l in 0..nc {
                let mut s = 0.0;
                for i in 0..m {
                    s += b[i * nc + k] * ab[i * nc + l];
                }
                triplets.push((nodes[k], nodes[l], w * s));
            }
        }
    }
    CsrMatrix::from_triplets(grid.node_count(), grid.node_count(), &triplets)
}

pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Preconditioned CG for `A x = b` starting from `x0`. The residual is measured
/// relative to `scale`. Nonpositive curvature is reported as [`Error::NotSpd`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Vec<f64>,
    diag: Option<&[f64]>,
    scale: f64,
    tol: f64,
    max_iter: usize,
    what: &str,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut x = x0;
    let mut r = vec![0.0; n];
    a.mul_vec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let precond = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = r[i] / d[i];
            }
        }
        None => z.copy_from_slice(r),
    };
    let mut rel = math::norm(&r) / scale;
    if rel <= tol {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            rel_residual: rel,
            converged: true,
        });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = math::dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let curv = math::dot(&p, &ap);
        if !(curv > 0.0) {
            return Err(Error::NotSpd(format!(
                "{what}: curvature p^T A p = {curv:e} at CG iteration {it}"
            )));
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = math::norm(&r) / scale;
        if rel <= tol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                rel_residual: rel,
                converged: true,
            });
        }
        precond(&r, &mut z);
        let rz_new = math::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgOutcome {
        x,
        iterations: max_iter,
        rel_residual: rel,
        converged: false,
    })
}

/// Solves `(μM + K) u = b` on the interior unknowns by Jacobi-preconditioned CG.
/// The initial guess is the datum extension.
pub fn solve_quadratic(prob: &DiscreteProblem, settings: &SolverSettings) -> Result<SolveReport> {
    settings.validate()?;
    let clock = Stopwatch::start();
    let grid = prob.grid().clone();
    let m = prob.xop.m();
    let mut probe = vec![0.0; m * m];
    for c in 0..grid.cell_count() {
        if !prob.f.quadratic_coefficients(prob.site(c), &mut probe) {
            return Err(Error::Config("solve_quadratic needs an integrand of the form ½⟨a(x)η, η⟩".into()));
        }
    }
    let f = prob.f.clone();
    let k = assemble_stiffness(&prob.xop, |x, out| {
        f.quadratic_coefficients(x, out);
    });
    let wn = grid.node_weights();
    let mut mass = vec![0.0; grid.node_count()];
    let mut load = vec![0.0; grid.node_count()];
    if let Some(g) = &prob.g {
        for i in 0..grid.node_count() {
            let (mu, r) = g.linear_quadratic(prob.node(i)).ok_or_else(|| {
                Error::Config("solve_quadratic needs a lower-order term of the form μs²/2 - r s".into())
            })?;
            mass[i] = wn[i] * mu;
            load[i] = wn[i] * r;
        }
    }

    let interior = &prob.interior;
    let mut a = k.submatrix(interior);
    if mass.iter().any(|v| *v != 0.0) {
        let mut triplets = Vec::with_capacity(a.nnz() + interior.len());
        for i in 0..a.nrows() {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((i, *c, *v));
            }
            triplets.push((i, i, mass[interior[i]]));
        }
        a = CsrMatrix::from_triplets(a.nrows(), a.ncols(), &triplets);
    }

    // right-hand side with only the boundary values lifted, for the residual scale
    let mut lifted = prob.phi.clone();
    for &i in interior {
        lifted[i] = 0.0;
    }
    let mut k_lift = vec![0.0; grid.node_count()];
    k.mul_vec(&lifted, &mut k_lift);
    let b: Vec<f64> = interior.iter().map(|&i| load[i] - k_lift[i]).collect();
    let scale = math::norm(&b);

    let x0: Vec<f64> = interior.iter().map(|&i| prob.phi[i]).collect();
    let diag = a.diagonal();
    let jacobi: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { *d } else { 1.0 }).collect();
    let outcome = if scale == 0.0 {
        CgOutcome {
            x: vec![0.0; interior.len()],
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        }
    } else {
        pcg(
            &a,
            &b,
            x0,
            settings.preconditioner.then_some(jacobi.as_slice()),
            scale,
            settings.tol,
            settings.max_iter,
            "reduced stiffness + mass on interior nodes",
        )?
    };

    let func = assemble_functional(prob);
    let u = func.embed(&outcome.x);
    let value = func.value_full(&u);
    let message = if outcome.converged {
        String::new()
    } else {
        format!("CG stopped after {} iterations at relative residual {:e}", outcome.iterations, outcome.rel_residual)
    };
    Ok(SolveReport {
        method: "pcg".into(),
        minimizer: u,
        min_value: value,
        iterations: outcome.iterations,
        final_grad_norm: outcome.rel_residual,
        tolerance: settings.tol,
        converged: outcome.converged,
        wall_time: clock.seconds(),
        value_history: Vec::new(),
        message,
    })
}

/// L-BFGS with Armijo backtracking on the interior unknowns. The gradient is
/// measured in the dual norm `sqrt(Σ g_i² / w_i)` (the `L²` norm of its Riesz
/// representative), which keeps the stopping test independent of the grid.
pub fn minimize_convex(prob: &DiscreteProblem, init: Option<&[f64]>, settings: &SolverSettings) -> Result<SolveReport> {
    settings.validate()?;
    let clock = Stopwatch::start();
    let grid = prob.grid().clone();
    let func = assemble_functional(prob);
    let n = func.unknowns();
    let winv: Vec<f64> = prob.interior.iter().map(|&i| 1.0 / grid.node_weights()[i]).collect();
    let dual_norm = |g: &[f64]| math::sqrt(g.iter().zip(&winv).map(|(a, w)| a * a * w).sum());

    let mut z = match init {
        Some(u) => {
            if u.len() != grid.node_count() {
                return Err(Error::dim("initial field", grid.node_count(), u.len()));
            }
            func.restrict(u)
        }
        None => func.restrict(&prob.phi),
    };
    let mut g = vec![0.0; n];
    let mut f = func.value_and_gradient(&z, &mut g);
    if !f.is_finite() {
        return Err(Error::Input("functional is not finite at the initial field".into()));
    }
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.memory);
    let mut d = vec![0.0; n];
    let mut z_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut message = String::new();
    let mut gn = dual_norm(&g);

    while iterations < settings.max_iter {
        if gn <= settings.tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        two_loop(&pairs, &g, &winv, &mut d);
        if pairs.is_empty() {
            let s = 1.0 / gn.max(1.0);
            d.iter_mut().for_each(|v| *v *= s);
        }
        let mut slope = math::dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            for i in 0..n {
                d[i] = -winv[i] * g[i];
            }
            slope = math::dot(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..60 {
            for i in 0..n {
                z_new[i] = z[i] + t * d[i];
            }
            f_new = func.value_and_gradient(&z_new, &mut g_new);
            // the second test takes over once value differences drop below roundoff
            let armijo = f_new <= f + 1e-4 * t * slope;
            let flat = f_new <= f + 1e-12 * (1.0 + f.abs()) && math::dot(&g_new, &d).abs() <= 0.9 * slope.abs();
            if f_new.is_finite() && (armijo || flat) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            message = format!("line search failed at iteration {iterations}");
            break;
        }
        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        if s.iter().all(|v| *v == 0.0) {
            message = format!("step underflow at iteration {iterations}");
            break;
        }
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = math::dot(&s, &y);
        if sy > 1e-14 * math::norm(&s) * math::norm(&y) && sy > 0.0 {
            if pairs.len() == settings.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        core::mem::swap(&mut z, &mut z_new);
        core::mem::swap(&mut g, &mut g_new);
        f = f_new;
        history.push(f);
        gn = dual_norm(&g);
    }
    if !converged && message.is_empty() {
        if gn <= settings.tol * (1.0 + f.abs()) {
            converged = true;
        } else {
            message = format!("reached max_iter = {}", settings.max_iter);
        }
    }
    Ok(SolveReport {
        method: "lbfgs".into(),
        minimizer: func.embed(&z),
        min_value: f,
        iterations,
        final_grad_norm: gn / (1.0 + f.abs()),
        tolerance: settings.tol,
        converged,
        wall_time: clock.seconds(),
        value_history: history,
        message,
    })
}

/// `d = -H g` with the initial inverse Hessian `γ W⁻¹`.
fn two_loop(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64], winv: &[f64], d: &mut [f64]) {
    let n = g.len();
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * math::dot(s, &q);
        alphas[k] = a;
        for i in 0..n {
            q[i] -= a * y[i];
        }
    }
    let gamma = match pairs.back() {
        Some((s, y, _)) => {
            let ywy: f64 = y.iter().zip(winv).map(|(a, w)| a * a * w).sum();
            math::dot(s, y) / ywy
        }
        None => 1.0,
    };
    for i in 0..n {
        q[i] *= gamma * winv[i];
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * math::dot(y, &q);
        for i in 0..n {
            q[i] += (alphas[k] - b) * s[i];
        }
    }
    for i in 0..n {
        d[i] = -q[i];
    }
}

/// Quadratic problems go to [`solve_quadratic`], everything else to [`minimize_convex`].
pub fn solve(prob: &DiscreteProblem, settings: &SolverSettings) -> Result<SolveReport> {
    if prob.is_quadratic() {
        solve_quadratic(prob, settings)
    } else {
        minimize_convex(prob, None, settings)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareEstimate {
    pub lambda: f64,
    /// Nodal eigenfield, zero on the boundary, unit trapezoid `L²` norm.
    pub eigenfield: Vec<f64>,
    pub iterations: usize,
    pub inner_iterations: usize,
}

/// Smallest eigenvalue of `Ku = λMu` on the interior nodes (`K` the stiffness with
/// `a = I`, `M` the trapezoid mass) by inverse iteration with CG inner solves.
pub fn poincare_constant(grid: Arc<Grid>, frame: &Frame, tol: f64, settings: &SolverSettings) -> Result<PoincareEstimate> {
    if !(tol > 0.0) {
        return Err(Error::Input("eigenvalue tolerance must be positive".into()));
    }
    let xop = DiscreteXOperator::new(grid.clone(), frame)?;
    let m = xop.m();
    let k_full = assemble_stiffness(&xop, |_, out| {
        out.fill(0.0);
        for i in 0..m {
            out[i * m + i] = 1.0;
        }
    });
    let interior = grid.interior_nodes();
    if interior.is_empty() {
        return Err(Error::Input("grid has no interior nodes".into()));
    }
    let k = k_full.submatrix(&interior);
    let mass: Vec<f64> = interior.iter().map(|&i| grid.node_weights()[i]).collect();
    let diag = k.diagonal();
    let jacobi: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { *d } else { 1.0 }).collect();
    let inner_tol = (tol * 1e-2).min(1e-10);

    let m_norm = |v: &[f64]| math::sqrt(v.iter().zip(&mass).map(|(a, w)| a * a * w).sum());
    let mut v = vec![1.0; interior.len()];
    let nv = m_norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut lambda_prev = f64::INFINITY;
    let mut inner = 0;
    let mut kv = vec![0.0; v.len()];
    for outer in 1..=settings.max_iter.min(500) {
        let rhs: Vec<f64> = v.iter().zip(&mass).map(|(a, w)| a * w).collect();
        let scale = math::norm(&rhs);
        let out = pcg(
            &k,
            &rhs,
            v.clone(),
            settings.preconditioner.then_some(jacobi.as_slice()),
            scale,
            inner_tol,
            settings.max_iter,
            "Poincaré stiffness on interior nodes",
        )?;
        inner += out.iterations;
        let mut y = out.x;
        let ny = m_norm(&y);
        y.iter_mut().for_each(|a| *a /= ny);
        k.mul_vec(&y, &mut kv);
        let lambda = math::dot(&y, &kv);
        v = y;
        if (lambda - lambda_prev).abs() <= tol * lambda {
            let mut eigenfield = vec![0.0; grid.node_count()];
            let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for (kk, &i) in interior.iter().enumerate() {
                eigenfield[i] = sign * v[kk];
            }
            return Ok(PoincareEstimate {
                lambda,
                eigenfield,
                iterations: outer,
                inner_iterations: inner,
            });
        }
        lambda_prev = lambda;
    }
    Err(Error::NoConvergence(format!(
        "inverse iteration did not reach relative tolerance {tol:e}"
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub c: f64,
    pub c_omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
    pub probes: usize,
    /// `min (A - cB) - (k1 (A + B) - k2)` over the probes, `A = Σ w|Xu|^p`, `B = Σ w|u|^p`.
    pub worst_margin: f64,
    /// `(A - cB) / (A + B)` at `u = φ + T v` with `v` the eigenfield and `T` large.
    pub eigen_ratio: f64,
    pub holds: bool,
    /// The `p = 2` Poincaré constant stands in for `c_{p,Ω}`.
    pub surrogate: bool,
}

/// Probes `A(u) - cB(u) >= k1 (A(u) + B(u)) - k2` on `u = φ + t ξ`. The constants
/// come from `B <= αA + β`, `α = 4^{p-1}/c_Ω`, `β = α A(φ) + 2^{p-1} B(φ)` (with
/// `α = 1/c_Ω`, `β = 0` when `φ = 0`): `k1 = (1 - cα)/(1 + α)`, `k2 = (c + k1)β`.
pub fn coercivity_margin(
    prob: &DiscreteProblem,
    c: f64,
    n_probes: usize,
    poincare: &PoincareEstimate,
    seed: u64,
) -> Result<CoercivityReport> {
    let grid = prob.grid().clone();
    if poincare.eigenfield.len() != grid.node_count() {
        return Err(Error::dim("eigenfield", grid.node_count(), poincare.eigenfield.len()));
    }
    let p = prob.f.exponent();
    let m = prob.xop.m();
    let mut xu = vec![0.0; m * grid.cell_count()];
    let mut ab = |u: &[f64]| -> (f64, f64) {
        prob.xop.apply_raw(u, &mut xu);
        let a: f64 = xu.chunks(m).map(|s| math::powf(math::norm(s), p)).sum::<f64>() * grid.cell_volume();
        let b: f64 = u
            .iter()
            .zip(grid.node_weights())
            .map(|(v, w)| w * math::powf(math::abs(*v), p))
            .sum();
        (a, b)
    };
    let c_omega = poincare.lambda;
    let phi = prob.phi.clone();
    let (a_phi, b_phi) = ab(&phi);
    let (alpha, beta) = if phi.iter().all(|v| *v == 0.0) {
        (1.0 / c_omega, 0.0)
    } else {
        let al = math::powf(4.0, p - 1.0) / c_omega;
        (al, al * a_phi + math::powf(2.0, p - 1.0) * b_phi)
    };
    let k1 = (1.0 - c * alpha) / (1.0 + alpha);
    let k2 = ((c + k1) * beta).max(0.0);

    let mut margin = |u: &[f64]| -> f64 {
        let (a, b) = ab(u);
        let slack = 1e-8 * (a + b);
        (a - c * b) - (k1 * (a + b) - k2) + slack
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = margin(&phi);
    let mut probes = 1;
    let interior = grid.interior_nodes();
    let mut u = phi.clone();
    for _ in 0..n_probes {
        let t = math::powf(10.0, -2.0 + 4.0 * rng.random::<f64>());
        u.copy_from_slice(&phi);
        for &i in &interior {
            u[i] += t * (2.0 * rng.random::<f64>() - 1.0);
        }
        worst = worst.min(margin(&u));
        probes += 1;
    }
    for t in [1.0, 10.0, 100.0] {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = phi[i] + t * poincare.eigenfield[i];
        }
        worst = worst.min(margin(&u));
        probes += 1;
    }
    for (i, ui) in u.iter_mut().enumerate() {
        *ui = phi[i] + 1e3 * poincare.eigenfield[i];
    }
    let (a, b) = ab(&u);
    let eigen_ratio = (a - c * b) / (a + b);
    Ok(CoercivityReport {
        c,
        c_omega,
        alpha,
        beta,
        k1,
        k2,
        probes,
        worst_margin: worst,
        eigen_ratio,
        holds: k1 > 0.0 && worst >= 0.0 && eigen_ratio > 0.0,
        surrogate: p != 2.0,
    })
}
