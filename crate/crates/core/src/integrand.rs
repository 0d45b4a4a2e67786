//! Integrands `f(x, η)`, lower-order terms `g(x, s)`, operator coefficients, and
//! sampling checks for the structural conditions (growth, Lipschitz and Hölder
//! bounds, gradient consistency, convexity).
//!
//! Every integrand carries an analytic `∇_η f`; nothing is differentiated
//! automatically. The checks are samplers: they certify the stated inequalities
//! only at the probed points and report the worst margin they found.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::math::{self, Matrix};
use crate::mesh::{GradientField, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrandKind {
    Quadratic,
    PPower,
    PeriodicComposed,
    Shifted,
    Custom,
}

/// Nonnegative auxiliary function of `x`: a constant or a table looked up at the
/// nearest node (`Nodal`) or the containing cell (`Sites`).
#[derive(Clone, Debug, PartialEq)]
pub enum Aux {
    Const(f64),
    Nodal(Arc<Grid>, Vec<f64>),
    Sites(Arc<Grid>, Vec<f64>),
}

impl Aux {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Aux::Const(v) => *v,
            Aux::Nodal(g, v) => v[g.nearest_node(x)],
            Aux::Sites(g, v) => v[g.locate_cell(x)],
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Aux::Const(v) => *v,
            Aux::Nodal(_, v) | Aux::Sites(_, v) => v.iter().cloned().fold(0.0, f64::max),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match self {
            Aux::Const(v) => *v >= 0.0 && v.is_finite(),
            Aux::Nodal(g, v) => v.len() == g.node_count() && v.iter().all(|a| *a >= 0.0 && a.is_finite()),
            Aux::Sites(g, v) => v.len() == g.cell_count() && v.iter().all(|a| *a >= 0.0 && a.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("{what} must be a finite nonnegative function of matching length")))
        }
    }
}

impl Default for Aux {
    fn default() -> Self {
        Aux::Const(0.0)
    }
}

/// `c0 |η|^p - a0(x) <= f(x, η) <= c1 |η|^p + a1(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Growth {
    pub p: f64,
    pub c0: f64,
    pub c1: f64,
    pub a0: Aux,
    pub a1: Aux,
}

impl Growth {
    pub fn new(p: f64, c0: f64, c1: f64, a0: Aux, a1: Aux) -> Result<Self> {
        check_exponent(p)?;
        if !(c0 > 0.0) || !(c1 >= c0) || !c1.is_finite() {
            return Err(Error::Input(format!("growth constants need 0 < c0 <= c1, got c0={c0}, c1={c1}")));
        }
        a0.validate("a0")?;
        a1.validate("a1")?;
        Ok(Growth { p, c0, c1, a0, a1 })
    }

    pub fn homogeneous(p: f64, c0: f64, c1: f64) -> Result<Self> {
        Self::new(p, c0, c1, Aux::Const(0.0), Aux::Const(0.0))
    }

    pub fn lower(&self, x: &[f64], eta_norm: f64) -> f64 {
        self.c0 * math::powf(eta_norm, self.p) - self.a0.eval(x)
    }

    pub fn upper(&self, x: &[f64], eta_norm: f64) -> f64 {
        self.c1 * math::powf(eta_norm, self.p) + self.a1.eval(x)
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("exponent p must lie in (1, inf), got {p}")))
    }
}

pub trait Integrand: Send + Sync + fmt::Debug {
    fn m(&self) -> usize;
    fn exponent(&self) -> f64;
    fn eval(&self, x: &[f64], eta: &[f64]) -> f64;
    /// Writes `∇_η f(x, η)` into `out`.
    fn grad(&self, x: &[f64], eta: &[f64], out: &mut [f64]);
    fn growth(&self) -> Growth;
    fn kind(&self) -> IntegrandKind {
        IntegrandKind::Custom
    }
    /// For `f(x, η) = ½⟨a(x)η, η⟩` writes `a(x)` (row-major `m x m`) and returns true.
    fn quadratic_coefficients(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// Grid whose sites this integrand is tied to, if any.
    fn sites(&self) -> Option<&Arc<Grid>> {
        None
    }
}

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes a row-major matrix for the point `x`.
pub type MatrixFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Nonnegative scalar coefficient: a constant or a function with declared bounds.
#[derive(Clone)]
pub enum ScalarField {
    Const(f64),
    Function {
        f: ScalarFn,
        lower: f64,
        upper: f64,
    },
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Const(v) => write!(f, "Const({v})"),
            ScalarField::Function { lower, upper, .. } => write!(f, "Function[{lower}, {upper}]"),
        }
    }
}

impl ScalarField {
    pub fn function(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Input(format!("scalar field bounds must satisfy lower <= upper, got [{lower}, {upper}]")));
        }
        Ok(ScalarField::Function {
            f: Arc::new(f),
            lower,
            upper,
        })
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Const(v) => *v,
            ScalarField::Function { f, .. } => f(x),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            ScalarField::Const(v) => (*v, *v),
            ScalarField::Function { lower, upper, .. } => (*lower, *upper),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Const(v) if *v == 0.0)
    }
}

#[derive(Clone)]
enum CoeffRepr {
    Constant(Matrix),
    Scalar(ScalarField),
    Function(MatrixFn),
    Periodic {
        profile: Box<OperatorCoefficients>,
        frame: Frame,
        eps: f64,
    },
}

/// Symmetric `m x m` matrix field `a(x)` with `c0|η|² <= ⟨a(x)η, η⟩ <= c1|η|²`.
#[derive(Clone)]
pub struct OperatorCoefficients {
    m: usize,
    repr: CoeffRepr,
    c0: f64,
    c1: f64,
}

impl fmt::Debug for OperatorCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let repr = match &self.repr {
            CoeffRepr::Constant(a) => format!("Constant({:?})", a.as_slice()),
            CoeffRepr::Scalar(s) => format!("Scalar({s:?})"),
            CoeffRepr::Function(_) => "Function".into(),
            CoeffRepr::Periodic { profile, eps, .. } => format!("Periodic(eps={eps}, {profile:?})"),
        };
        f.debug_struct("OperatorCoefficients")
            .field("m", &self.m)
            .field("repr", &repr)
            .field("c0", &self.c0)
            .field("c1", &self.c1)
            .finish()
    }
}

/// Outcome of [`OperatorCoefficients::check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub samples: usize,
    pub max_asymmetry: f64,
    pub min_rayleigh: f64,
    pub max_rayleigh: f64,
    pub passed: bool,
}

impl OperatorCoefficients {
    pub fn constant(a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() == 0 {
            return Err(Error::Input("coefficient matrix must be square".into()));
        }
        if a.asymmetry() > 1e-12 {
            return Err(Error::Input(format!("coefficient matrix is not symmetric (|a - a^T| = {:e})", a.asymmetry())));
        }
        let ev = a.symmetric_eigenvalues();
        let (c0, c1) = (ev[0], ev[ev.len() - 1]);
        if !(c0 > 0.0) {
            return Err(Error::Input(format!("coefficient matrix is not positive definite (min eigenvalue {c0})")));
        }
        Ok(OperatorCoefficients {
            m: a.rows(),
            repr: CoeffRepr::Constant(a),
            c0,
            c1,
        })
    }

    pub fn identity(m: usize) -> Self {
        Self::constant(Matrix::identity(m)).expect("identity is SPD")
    }

    /// `s(x) I_m`.
    pub fn scalar(m: usize, s: ScalarField) -> Result<Self> {
        let (c0, c1) = s.bounds();
        if !(c0 > 0.0) {
            return Err(Error::Input(format!("scalar coefficient needs a positive lower bound, got {c0}")));
        }
        Ok(OperatorCoefficients {
            m,
            repr: CoeffRepr::Scalar(s),
            c0,
            c1,
        })
    }

    /// General field; `f(x, out)` writes row-major `a(x)`. The bounds are declared,
    /// not derived; [`Self::check`] samples them.
    pub fn function(m: usize, f: MatrixFn, c0: f64, c1: f64) -> Result<Self> {
        if !(c0 > 0.0) || !(c1 >= c0) {
            return Err(Error::Input(format!("coefficient bounds need 0 < c0 <= c1, got ({c0}, {c1})")));
        }
        Ok(OperatorCoefficients {
            m,
            repr: CoeffRepr::Function(f),
            c0,
            c1,
        })
    }

    /// `x ↦ a(reduce(δ_{1/ε} x))`.
    pub fn periodic(&self, frame: &Frame, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Input(format!("eps must be positive, got {eps}")));
        }
        Ok(OperatorCoefficients {
            m: self.m,
            repr: CoeffRepr::Periodic {
                profile: Box::new(self.clone()),
                frame: frame.clone(),
                eps,
            },
            c0: self.c0,
            c1: self.c1,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.c0, self.c1)
    }

    pub fn constant_matrix(&self) -> Option<&Matrix> {
        match &self.repr {
            CoeffRepr::Constant(a) => Some(a),
            _ => None,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        match &self.repr {
            CoeffRepr::Constant(a) => out[..m * m].copy_from_slice(a.as_slice()),
            CoeffRepr::Scalar(s) => {
                let v = s.eval(x);
                out[..m * m].fill(0.0);
                for i in 0..m {
                    out[i * m + i] = v;
                }
            }
            CoeffRepr::Function(f) => f(x, &mut out[..m * m]),
            CoeffRepr::Periodic { profile, frame, eps } => {
                let mut y = vec![0.0; x.len()];
                frame.periodic_sample_into(*eps, x, &mut y);
                profile.eval_into(&y, out);
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut a = Matrix::zeros(self.m, self.m);
        self.eval_into(x, a.as_mut_slice());
        a
    }

    /// `½⟨a(x)η, η⟩` and optionally `a(x)η`, without heap traffic for scalar fields.
    fn energy(&self, x: &[f64], eta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let m = self.m;
        match &self.repr {
            CoeffRepr::Scalar(s) => {
                let v = s.eval(x);
                if let Some(g) = grad {
                    for (gi, e) in g.iter_mut().zip(eta) {
                        *gi = v * e;
                    }
                }
                0.5 * v * math::dot(eta, eta)
            }
            CoeffRepr::Constant(a) => quad_form(m, a.as_slice(), eta, grad),
            _ => {
                let mut buf = [0.0; 64];
                let mut heap;
                let a: &mut [f64] = if m * m <= buf.len() {
                    &mut buf[..m * m]
                } else {
                    heap = vec![0.0; m * m];
                    &mut heap
                };
                self.eval_into(x, a);
                quad_form(m, a, eta, grad)
            }
        }
    }

    /// Samples symmetry and Rayleigh quotients at random points of `[lo, hi]`.
    pub fn check(&self, lo: &[f64], hi: &[f64], n_samples: usize, seed: u64) -> CoefficientReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.m;
        let mut a = Matrix::zeros(m, m);
        let mut x = vec![0.0; lo.len()];
        let mut eta = vec![0.0; m];
        let mut report = CoefficientReport {
            samples: n_samples,
            max_asymmetry: 0.0,
            min_rayleigh: f64::INFINITY,
            max_rayleigh: f64::NEG_INFINITY,
            passed: true,
        };
        for _ in 0..n_samples {
            sample_box(&mut rng, lo, hi, &mut x);
            self.eval_into(&x, a.as_mut_slice());
            report.max_asymmetry = report.max_asymmetry.max(a.asymmetry());
            sample_direction(&mut rng, &mut eta);
            let mut ae = vec![0.0; m];
            a.mul_vec(&eta, &mut ae);
            let q = math::dot(&ae, &eta);
            report.min_rayleigh = report.min_rayleigh.min(q);
            report.max_rayleigh = report.max_rayleigh.max(q);
        }
        let tol = 1e-12 * self.c1.max(1.0);
        report.passed = report.max_asymmetry <= 1e-12
            && (n_samples == 0 || (report.min_rayleigh >= self.c0 - tol && report.max_rayleigh <= self.c1 + tol));
        report
    }
}

fn quad_form(m: usize, a: &[f64], eta: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let mut e = 0.0;
    match grad {
        Some(g) => {
            for i in 0..m {
                let ai = math::dot(&a[i * m..(i + 1) * m], eta);
                g[i] = ai;
                e += ai * eta[i];
            }
        }
        None => {
            for i in 0..m {
                e += math::dot(&a[i * m..(i + 1) * m], eta) * eta[i];
            }
        }
    }
    0.5 * e
}

/// `f(x, η) = ½⟨a(x)η, η⟩`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    a: OperatorCoefficients,
}

impl Quadratic {
    pub fn new(a: OperatorCoefficients) -> Self {
        Quadratic { a }
    }

    pub fn coefficients(&self) -> &OperatorCoefficients {
        &self.a
    }
}

impl Integrand for Quadratic {
    fn m(&self) -> usize {
        self.a.m
    }
    fn exponent(&self) -> f64 {
        2.0
    }
    fn eval(&self, x: &[f64], eta: &[f64]) -> f64 {
        self.a.energy(x, eta, None)
    }
    fn grad(&self, x: &[f64], eta: &[f64], out: &mut [f64]) {
        self.a.energy(x, eta, Some(out));
    }
    fn growth(&self) -> Growth {
        Growth::homogeneous(2.0, 0.5 * self.a.c0, 0.5 * self.a.c1).expect("validated bounds")
    }
    fn kind(&self) -> IntegrandKind {
        IntegrandKind::Quadratic
    }
    fn quadratic_coefficients(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.a.eval_into(x, out);
        true
    }
}

/// `f(x, η) = c(x)|η|^p`.
#[derive(Clone, Debug)]
pub struct PPower {
    c: ScalarField,
    p: f64,
    m: usize,
}

impl PPower {
    pub fn new(m: usize, c: ScalarField, p: f64) -> Result<Self> {
        check_exponent(p)?;
        let (lo, _) = c.bounds();
        if !(lo > 0.0) {
            return Err(Error::Input(format!("p-power coefficient needs a positive lower bound, got {lo}")));
        }
        Ok(PPower { c, p, m })
    }
}

impl Integrand for PPower {
    fn m(&self) -> usize {
        self.m
    }
    fn exponent(&self) -> f64 {
        self.p
    }
    fn eval(&self, x: &[f64], eta: &[f64]) -> f64 {
        self.c.eval(x) * math::powf(math::norm(eta), self.p)
    }
    fn grad(&self, x: &[f64], eta: &[f64], out: &mut [f64]) {
        let r = math::norm(eta);
        if r == 0.0 {
            out[..self.m].fill(0.0);
            return;
        }
        let s = self.c.eval(x) * self.p * math::powf(r, self.p - 2.0);
        for (o, e) in out.iter_mut().zip(eta) {
            *o = s * e;
        }
    }
    fn growth(&self) -> Growth {
        let (lo, hi) = self.c.bounds();
        Growth::homogeneous(self.p, lo, hi).expect("validated bounds")
    }
    fn kind(&self) -> IntegrandKind {
        IntegrandKind::PPower
    }
    fn quadratic_coefficients(&self, x: &[f64], out: &mut [f64]) -> bool {
        if self.p != 2.0 {
            return false;
        }
        let v = 2.0 * self.c.eval(x);
        let m = self.m;
        out[..m * m].fill(0.0);
        for i in 0..m {
            out[i * m + i] = v;
        }
        true
    }
}

/// `f_ε(x, η) = f(reduce(δ_{1/ε} x), η)`.
#[derive(Clone, Debug)]
pub struct PeriodicComposed {
    inner: Arc<dyn Integrand>,
    frame: Frame,
    eps: f64,
}

impl PeriodicComposed {
    pub fn new(inner: Arc<dyn Integrand>, frame: &Frame, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Input(format!("eps must be positive, got {eps}")));
        }
        Ok(PeriodicComposed {
            inner,
            frame: frame.clone(),
            eps,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn with_sample<R>(&self, x: &[f64], k: impl FnOnce(&[f64]) -> R) -> R {
        let mut buf = [0.0; 16];
        if x.len() <= buf.len() {
            let y = &mut buf[..x.len()];
            self.frame.periodic_sample_into(self.eps, x, y);
            k(y)
        } else {
            let mut y = vec![0.0; x.len()];
            self.frame.periodic_sample_into(self.eps, x, &mut y);
            k(&y)
        }
    }
}

pub fn periodic_compose(f: Arc<dyn Integrand>, frame: &Frame, eps: f64) -> Result<PeriodicComposed> {
    PeriodicComposed::new(f, frame, eps)
}

impl Integrand for PeriodicComposed {
    fn m(&self) -> usize {
        self.inner.m()
    }
    fn exponent(&self) -> f64 {
        self.inner.exponent()
    }
    fn eval(&self, x: &[f64], eta: &[f64]) -> f64 {
        self.with_sample(x, |y| self.inner.eval(y, eta))
    }
    fn grad(&self, x: &[f64], eta: &[f64], out: &mut [f64]) {
        self.with_sample(x, |y| self.inner.grad(y, eta, out))
    }
    fn growth(&self) -> Growth {
        // tables refer to the profile's coordinates; only their sup carries over
        let g = self.inner.growth();
        Growth {
            a0: Aux::Const(g.a0.sup()),
            a1: Aux::Const(g.a1.sup()),
            ..g
        }
    }
    fn kind(&self) -> IntegrandKind {
        IntegrandKind::PeriodicComposed
    }
    fn quadratic_coefficients(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.with_sample(x, |y| self.inner.quadratic_coefficients(y, out))
    }
}

/// `g^Φ(x, η) = f(x, η + Φ(x))` with `Φ` sampled on the gradient sites of a grid.
#[derive(Clone, Debug)]
pub struct Shifted {
    inner: Arc<dyn Integrand>,
    phi: GradientField,
    growth: Growth,
}

impl Shifted {
    pub fn new(inner: Arc<dyn Integrand>, phi: GradientField) -> Result<Self> {
        if phi.m() != inner.m() {
            return Err(Error::dim("shift field components", inner.m(), phi.m()));
        }
        if let Some(g) = inner.sites() {
            if **g != **phi.grid() {
                return Err(Error::GridMismatch("shift field and integrand live on different sites"));
            }
        }
        let g = inner.growth();
        let p = g.p;
        let up = math::powf(2.0, p - 1.0);
        let grid = phi.grid().clone();
        let mut x = vec![0.0; grid.dim()];
        let mut a0 = Vec::with_capacity(grid.cell_count());
        let mut a1 = Vec::with_capacity(grid.cell_count());
        for c in 0..grid.cell_count() {
            grid.cell_center(c, &mut x);
            let phi_p = math::powf(math::norm(phi.site(c)), p);
            a0.push(g.a0.eval(&x) + g.c0 * phi_p);
            a1.push(g.a1.eval(&x) + g.c1 * up * phi_p);
        }
        let growth = Growth {
            p,
            c0: g.c0 / up,
            c1: g.c1 * up,
            a0: Aux::Sites(grid.clone(), a0),
            a1: Aux::Sites(grid, a1),
        };
        Ok(Shifted { inner, phi, growth })
    }

    pub fn shift_field(&self) -> &GradientField {
        &self.phi
    }

    fn shifted<R>(&self, x: &[f64], eta: &[f64], k: impl FnOnce(&[f64]) -> R) -> R {
        let phi = self.phi.sample_at(x);
        let mut buf = [0.0; 16];
        if eta.len() <= buf.len() {
            let e = &mut buf[..eta.len()];
            for i in 0..eta.len() {
                e[i] = eta[i] + phi[i];
            }
            k(e)
        } else {
            let e: Vec<f64> = eta.iter().zip(phi).map(|(a, b)| a + b).collect();
            k(&e)
        }
    }
}

pub fn shift(f: Arc<dyn Integrand>, phi: GradientField) -> Result<Shifted> {
    Shifted::new(f, phi)
}

impl Integrand for Shifted {
    fn m(&self) -> usize {
        self.inner.m()
    }
    fn exponent(&self) -> f64 {
        self.inner.exponent()
    }
    fn eval(&self, x: &[f64], eta: &[f64]) -> f64 {
        self.shifted(x, eta, |e| self.inner.eval(x, e))
    }
    fn grad(&self, x: &[f64], eta: &[f64], out: &mut [f64]) {
        self.shifted(x, eta, |e| self.inner.grad(x, e, out))
    }
    fn growth(&self) -> Growth {
        self.growth.clone()
    }
    fn kind(&self) -> IntegrandKind {
        IntegrandKind::Shifted
    }
    fn sites(&self) -> Option<&Arc<Grid>> {
        Some(self.phi.grid())
    }
}

/// Per-site `∇_η f(x_site, η_site)`.
pub fn momentum_map(f: &dyn Integrand, gf: &GradientField) -> Result<GradientField> {
    if f.m() != gf.m() {
        return Err(Error::dim("momentum map components", f.m(), gf.m()));
    }
    let grid = gf.grid().clone();
    let m = gf.m();
    let mut out = GradientField::zeros(grid.clone(), m);
    let mut x = vec![0.0; grid.dim()];
    for c in 0..grid.cell_count() {
        grid.cell_center(c, &mut x);
        f.grad(&x, gf.site(c), &mut out.samples_mut()[c * m..(c + 1) * m]);
    }
    Ok(out)
}

/// `d0|s|^p - b0 <= g(x, s) <= d1|s|^p + b1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerGrowth {
    pub d0: f64,
    pub d1: f64,
    pub b0: f64,
    pub b1: f64,
}

pub trait LowerOrderTerm: Send + Sync + fmt::Debug {
    fn exponent(&self) -> f64;
    fn eval(&self, x: &[f64], s: f64) -> f64;
    fn dgrad(&self, x: &[f64], s: f64) -> f64;
    fn growth(&self) -> LowerGrowth;
    /// `(μ(x), r(x))` when `g(x, s) = μ(x)s²/2 - r(x)s`.
    fn linear_quadratic(&self, _x: &[f64]) -> Option<(f64, f64)> {
        None
    }
}

/// `g(x, s) = μ s²/2 - r(x) s`.
#[derive(Clone, Debug)]
pub struct LinearQuadratic {
    mu: f64,
    rhs: ScalarField,
    p: f64,
    growth: LowerGrowth,
}

impl LinearQuadratic {
    /// Growth constants are taken with respect to `|s|^p` (the exponent of the
    /// integrand the term is paired with), using Young's inequality
    /// `|r s| <= δ|s|^p + κ_p(δ)|r|^{p'}` with `δ = young_delta`.
    pub fn new(mu: f64, rhs: ScalarField, p: f64) -> Result<Self> {
        Self::with_young_delta(mu, rhs, p, 0.25)
    }

    pub fn with_young_delta(mu: f64, rhs: ScalarField, p: f64, delta: f64) -> Result<Self> {
        check_exponent(p)?;
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::Input(format!("mu must be finite and nonnegative, got {mu}")));
        }
        if mu > 0.0 && p < 2.0 {
            return Err(Error::Input("a quadratic mass term needs p >= 2".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::Input("young delta must be positive".into()));
        }
        let (lo, hi) = rhs.bounds();
        let rmax = lo.abs().max(hi.abs());
        let q = p / (p - 1.0);
        let kappa = (p - 1.0) / p * math::powf(p * delta, -1.0 / (p - 1.0));
        let mass_lower = if p == 2.0 { 0.5 * mu } else { 0.0 };
        // s² <= |s|^p + 1 for p > 2
        let mass_slack = if p > 2.0 { 0.5 * mu } else { 0.0 };
        let (mut d0, mut d1, mut b0, mut b1) = (mass_lower, 0.5 * mu, 0.0, mass_slack);
        if rmax > 0.0 {
            let young = kappa * math::powf(rmax, q);
            d0 -= delta;
            d1 += delta;
            b0 += young;
            b1 += young;
        }
        if d1 == 0.0 {
            d1 = delta;
        }
        Ok(LinearQuadratic {
            mu,
            rhs,
            p,
            growth: LowerGrowth { d0, d1, b0, b1 },
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn rhs(&self) -> &ScalarField {
        &self.rhs
    }
}

impl LowerOrderTerm for LinearQuadratic {
    fn exponent(&self) -> f64 {
        self.p
    }
    fn eval(&self, x: &[f64], s: f64) -> f64 {
        0.5 * self.mu * s * s - self.rhs.eval(x) * s
    }
    fn dgrad(&self, x: &[f64], s: f64) -> f64 {
        self.mu * s - self.rhs.eval(x)
    }
    fn growth(&self) -> LowerGrowth {
        self.growth
    }
    fn linear_quadratic(&self, x: &[f64]) -> Option<(f64, f64)> {
        Some((self.mu, self.rhs.eval(x)))
    }
}

/// Samples the sandwich of [`LowerOrderTerm::growth`]; returns the worst margin
/// (negative means violated).
pub fn check_lower_growth(g: &dyn LowerOrderTerm, grid: &Grid, n_samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gr = g.growth();
    let p = g.exponent();
    let mut x = vec![0.0; grid.dim()];
    let mut worst = f64::INFINITY;
    for _ in 0..n_samples {
        sample_box(&mut rng, grid.lo(), grid.hi(), &mut x);
        let s = log_uniform_radius(&mut rng) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let v = g.eval(&x, s);
        let sp = math::powf(math::abs(s), p);
        let tol = 1e-12 * (1.0 + v.abs());
        worst = worst
            .min(v - (gr.d0 * sp - gr.b0) + tol)
            .min(gr.d1 * sp + gr.b1 - v + tol);
    }
    worst
}

fn sample_box(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64], x: &mut [f64]) {
    for d in 0..x.len() {
        x[d] = lo[d] + (hi[d] - lo[d]) * rng.random::<f64>();
    }
}

/// Unit vector, uniform on the sphere up to the rejection of tiny draws.
fn sample_direction(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = 2.0 * rng.random::<f64>() - 1.0;
        }
        let r = math::norm(out);
        if r > 1e-3 && r <= 1.0 {
            out.iter_mut().for_each(|v| *v /= r);
            return;
        }
    }
}

/// `10^u` with `u` uniform in `[-3, 3]`.
fn log_uniform_radius(rng: &mut ChaCha8Rng) -> f64 {
    math::powf(10.0, -3.0 + 6.0 * rng.random::<f64>())
}

fn sample_eta(rng: &mut ChaCha8Rng, out: &mut [f64], max_norm: f64, avoid: f64) {
    sample_direction(rng, out);
    let r = avoid + (max_norm - avoid) * rng.random::<f64>();
    out.iter_mut().for_each(|v| *v *= r);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub violations: usize,
    /// `min (f - lower)` over the samples.
    pub worst_lower_margin: f64,
    /// `min (upper - f)` over the samples.
    pub worst_upper_margin: f64,
    pub passed: bool,
}

/// Samples `x` in the grid box and `η` with `|η|` log-uniform in `[1e-3, 1e3]`
/// (plus `η = 0`) and checks the declared growth sandwich.
pub fn check_growth(f: &dyn Integrand, grid: &Grid, n_samples: usize, seed: u64) -> Result<GrowthReport> {
    if n_samples == 0 {
        return Err(Error::Input("check_growth needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = f.growth();
    let mut x = vec![0.0; grid.dim()];
    let mut eta = vec![0.0; f.m()];
    let mut report = GrowthReport {
        samples: n_samples,
        violations: 0,
        worst_lower_margin: f64::INFINITY,
        worst_upper_margin: f64::INFINITY,
        passed: true,
    };
    for k in 0..n_samples {
        sample_box(&mut rng, grid.lo(), grid.hi(), &mut x);
        if k == 0 {
            eta.fill(0.0);
        } else {
            sample_direction(&mut rng, &mut eta);
            let r = log_uniform_radius(&mut rng);
            eta.iter_mut().for_each(|v| *v *= r);
        }
        let r = math::norm(&eta);
        let v = f.eval(&x, &eta);
        let lo = v - g.lower(&x, r);
        let hi = g.upper(&x, r) - v;
        report.worst_lower_margin = report.worst_lower_margin.min(lo);
        report.worst_upper_margin = report.worst_upper_margin.min(hi);
        let tol = 1e-12 * (1.0 + v.abs());
        if lo < -tol || hi < -tol {
            report.violations += 1;
        }
    }
    report.passed = report.violations == 0;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoelderReport {
    pub samples: usize,
    pub alpha: f64,
    pub cbar: f64,
    pub worst_ratio: f64,
    pub passed: bool,
}

/// Samples `|∇f(x,η₁) - ∇f(x,η₂)| / (|η₁-η₂|^α (|η₁|+|η₂|+b(x))^{p-1-α})` and
/// compares its supremum with `cbar`.
pub fn check_hoelder_gradient(
    f: &dyn Integrand,
    alpha: f64,
    cbar: f64,
    b: &Aux,
    grid: &Grid,
    n_samples: usize,
    seed: u64,
) -> Result<HoelderReport> {
    let p = f.exponent();
    if !(alpha >= 0.0 && alpha <= 1.0f64.min(p - 1.0)) {
        return Err(Error::Input(format!("alpha must lie in [0, min(1, p-1)], got {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = f.m();
    let avoid = if p < 2.0 { 1e-8 } else { 0.0 };
    let (mut x, mut e1, mut e2) = (vec![0.0; grid.dim()], vec![0.0; m], vec![0.0; m]);
    let (mut g1, mut g2) = (vec![0.0; m], vec![0.0; m]);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        sample_box(&mut rng, grid.lo(), grid.hi(), &mut x);
        sample_eta(&mut rng, &mut e1, 10.0, avoid);
        sample_eta(&mut rng, &mut e2, 10.0, avoid);
        let d = math::dist(&e1, &e2);
        if d == 0.0 {
            continue;
        }
        f.grad(&x, &e1, &mut g1);
        f.grad(&x, &e2, &mut g2);
        let base = math::norm(&e1) + math::norm(&e2) + b.eval(&x);
        let denom = math::powf(d, alpha) * math::powf(base, p - 1.0 - alpha);
        worst = worst.max(math::dist(&g1, &g2) / denom);
    }
    Ok(HoelderReport {
        samples: n_samples,
        alpha,
        cbar,
        worst_ratio: worst,
        passed: worst <= cbar * (1.0 + 1e-9),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub samples: usize,
    /// Empirical `c2`: the largest observed ratio.
    pub c2: f64,
}

/// Empirical `c2` in `|f(x,η₁) - f(x,η₂)| <= c2 |η₁-η₂| (|η₁|+|η₂|+a(x)^{1/p})^{p-1}`
/// with `a = a0 + a1` from the declared growth.
pub fn check_local_lipschitz(f: &dyn Integrand, grid: &Grid, n_samples: usize, seed: u64) -> LipschitzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = f.m();
    let g = f.growth();
    let p = f.exponent();
    let (mut x, mut e1, mut e2) = (vec![0.0; grid.dim()], vec![0.0; m], vec![0.0; m]);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        sample_box(&mut rng, grid.lo(), grid.hi(), &mut x);
        sample_eta(&mut rng, &mut e1, 10.0, 0.0);
        sample_eta(&mut rng, &mut e2, 10.0, 0.0);
        let d = math::dist(&e1, &e2);
        if d == 0.0 {
            continue;
        }
        let a = g.a0.eval(&x) + g.a1.eval(&x);
        let base = math::norm(&e1) + math::norm(&e2) + math::powf(a, 1.0 / p);
        let ratio = math::abs(f.eval(&x, &e1) - f.eval(&x, &e2)) / (d * math::powf(base, p - 1.0));
        worst = worst.max(ratio);
    }
    LipschitzReport {
        samples: n_samples,
        c2: worst,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub samples: usize,
    pub worst_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `grad` with central differences of `eval` at random `(x, η)`, `|η| <= 10`.
/// The error is `|fd - grad| / max(|grad|, 1)`. For `p < 2` a ball of radius `1e-8`
/// around the origin is avoided and the tolerance is relaxed to `1e-4`.
pub fn check_gradient(f: &dyn Integrand, grid: &Grid, n_samples: usize, seed: u64) -> GradientCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = f.m();
    let p = f.exponent();
    let (avoid, tolerance) = if p < 2.0 { (1e-8, 1e-4) } else { (0.0, 1e-6) };
    let (mut x, mut eta, mut g, mut fd) = (vec![0.0; grid.dim()], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        sample_box(&mut rng, grid.lo(), grid.hi(), &mut x);
        sample_eta(&mut rng, &mut eta, 10.0, avoid);
        f.grad(&x, &eta, &mut g);
        let h = 1e-5 * (1.0 + math::norm(&eta));
        for i in 0..m {
            let keep = eta[i];
            eta[i] = keep + h;
            let up = f.eval(&x, &eta);
            eta[i] = keep - h;
            let down = f.eval(&x, &eta);
            eta[i] = keep;
            fd[i] = (up - down) / (2.0 * h);
        }
        worst = worst.max(math::dist(&fd, &g) / math::norm(&g).max(1.0));
    }
    GradientCheckReport {
        samples: n_samples,
        worst_error: worst,
        tolerance,
        passed: worst <= tolerance,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub samples: usize,
    /// Largest `f(tη₁+(1-t)η₂) - t f(η₁) - (1-t) f(η₂)`.
    pub worst_excess: f64,
    pub passed: bool,
}

pub fn check_convexity(f: &dyn Integrand, grid: &Grid, n_samples: usize, seed: u64) -> ConvexityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = f.m();
    let (mut x, mut e1, mut e2, mut mid) = (vec![0.0; grid.dim()], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        sample_box(&mut rng, grid.lo(), grid.hi(), &mut x);
        sample_eta(&mut rng, &mut e1, 10.0, 0.0);
        sample_eta(&mut rng, &mut e2, 10.0, 0.0);
        let t: f64 = rng.random();
        for i in 0..m {
            mid[i] = t * e1[i] + (1.0 - t) * e2[i];
        }
        let excess = f.eval(&x, &mid) - t * f.eval(&x, &e1) - (1.0 - t) * f.eval(&x, &e2);
        worst = worst.max(excess);
    }
    ConvexityReport {
        samples: n_samples,
        worst_excess: worst,
        passed: worst <= 1e-10,
    }
}
