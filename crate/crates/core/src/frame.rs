//! Vector-field families given by their coefficient matrix `C(x)`, plus the group
//! structure of the Heisenberg group `H^s` (group law, intrinsic dilations, reduction
//! modulo the lattice `2Z^n`, H-affine functions).

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Matrix};

/// User-supplied coefficient matrix. `out` is row-major `m x n`.
pub trait CoefficientField: Send + Sync {
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

impl<F> CoefficientField for F
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self(x, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    Euclidean,
    Heisenberg { s: usize },
    Grushin,
    Custom,
}

#[derive(Clone)]
pub struct Frame {
    n: usize,
    m: usize,
    kind: FrameKind,
    lipschitz_bound: f64,
    custom: Option<Arc<dyn CoefficientField>>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("kind", &self.kind)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish()
    }
}

impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        let same_custom = match (&self.custom, &other.custom) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b),
            _ => false,
        };
        self.n == other.n && self.m == other.m && self.kind == other.kind && same_custom
    }
}

impl Frame {
    /// `X_j = ∂_j` for `j = 1..n`.
    pub fn euclidean(n: usize) -> Result<Self> {
        Self::euclidean_partial(n, n)
    }

    /// The first `m` coordinate derivatives in `R^n`.
    pub fn euclidean_partial(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(Error::Input(format!("euclidean frame needs 1 <= m <= n, got m={m}, n={n}")));
        }
        Ok(Frame {
            n,
            m,
            kind: FrameKind::Euclidean,
            lipschitz_bound: 0.0,
            custom: None,
        })
    }

    /// Horizontal gradient of `H^s`: `n = 2s+1`, `m = 2s`.
    pub fn heisenberg(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Input("heisenberg frame needs s >= 1".into()));
        }
        Ok(Frame {
            n: 2 * s + 1,
            m: 2 * s,
            kind: FrameKind::Heisenberg { s },
            lipschitz_bound: 0.5,
            custom: None,
        })
    }

    /// `X_1 = ∂_1`, `X_2 = x_1 ∂_2` on `R^2`.
    pub fn grushin() -> Self {
        Frame {
            n: 2,
            m: 2,
            kind: FrameKind::Grushin,
            lipschitz_bound: 1.0,
            custom: None,
        }
    }

    pub fn custom(n: usize, m: usize, lipschitz_bound: f64, field: Arc<dyn CoefficientField>) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(Error::Input(format!("custom frame needs 1 <= m <= n, got m={m}, n={n}")));
        }
        if !(lipschitz_bound >= 0.0) {
            return Err(Error::Input("lipschitz bound must be nonnegative".into()));
        }
        Ok(Frame {
            n,
            m,
            kind: FrameKind::Custom,
            lipschitz_bound,
            custom: Some(field),
        })
    }

    /// Parses the built-in tags `euclidean:<n>`, `heisenberg:<s>` and `grushin`.
    pub fn from_tag(tag: &str) -> Result<Self> {
        let (head, arg) = match tag.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (tag.trim(), None),
        };
        let parse = |a: Option<&str>| -> Result<usize> {
            a.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Input(format!("frame tag `{tag}` needs a positive integer argument")))
        };
        match head {
            "euclidean" => Self::euclidean(parse(arg)?),
            "heisenberg" => Self::heisenberg(parse(arg)?),
            "grushin" if arg.is_none() => Ok(Self::grushin()),
            _ => Err(Error::Input(format!("unknown frame tag `{tag}`"))),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// Writes `C(x)` (row-major `m x n`) into `out` without validating lengths.
    pub fn coefficients_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out[..self.m * n].fill(0.0);
        match self.kind {
            FrameKind::Euclidean => {
                for j in 0..self.m {
                    out[j * n + j] = 1.0;
                }
            }
            FrameKind::Heisenberg { s } => {
                for j in 0..s {
                    out[j * n + j] = 1.0;
                    out[j * n + n - 1] = -0.5 * x[s + j];
                    let k = s + j;
                    out[k * n + k] = 1.0;
                    out[k * n + n - 1] = 0.5 * x[j];
                }
            }
            FrameKind::Grushin => {
                out[0] = 1.0;
                out[n + 1] = x[0];
            }
            FrameKind::Custom => {
                if let Some(field) = &self.custom {
                    field.eval(x, &mut out[..self.m * n]);
                }
            }
        }
    }

    pub fn eval_coefficients(&self, x: &[f64]) -> Result<Matrix> {
        self.check_point(x)?;
        let mut c = Matrix::zeros(self.m, self.n);
        self.coefficients_into(x, c.as_mut_slice());
        Ok(c)
    }

    /// `B(x) = C(x) C(x)^T` and its determinant; `det B > 0` witnesses linear
    /// independence of the fields at `x`.
    pub fn gram_matrix(&self, x: &[f64]) -> Result<(Matrix, f64)> {
        let c = self.eval_coefficients(x)?;
        let b = c.mul(&c.transpose())?;
        let det = b.determinant();
        Ok((b, det))
    }

    /// Samples `det B` at the given points and counts those below `threshold`.
    pub fn lic_report<'a, I>(&self, points: I, threshold: f64) -> Result<LicReport>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut report = LicReport {
            samples: 0,
            degenerate: 0,
            fraction_degenerate: 0.0,
            min_det: f64::INFINITY,
        };
        for x in points {
            let (_, det) = self.gram_matrix(x)?;
            report.samples += 1;
            report.min_det = report.min_det.min(det);
            if det < threshold {
                report.degenerate += 1;
            }
        }
        if report.samples > 0 {
            report.fraction_degenerate = report.degenerate as f64 / report.samples as f64;
        }
        Ok(report)
    }

    /// `δ_λ` for Heisenberg frames, plain scaling otherwise.
    pub fn dilate_into(&self, lambda: f64, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = lambda * v;
        }
        if let FrameKind::Heisenberg { .. } = self.kind {
            out[self.n - 1] = lambda * lambda * x[self.n - 1];
        }
    }

    /// Maps `x` to its representative in the fundamental box `[-1, 1)^n`: H-periodic
    /// reduction for Heisenberg frames, coordinatewise reduction modulo 2 otherwise.
    pub fn reduce_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            FrameKind::Heisenberg { s } => {
                let k = heisenberg_reduce_shift(s, x);
                heisenberg_translate_even(s, &k, x, out);
            }
            _ => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v + 2.0 * lattice_index(*v) as f64;
                }
            }
        }
    }

    /// `reduce(δ_{1/ε}(x))`: the point at which an `ε`-periodic integrand samples its
    /// periodic profile.
    pub fn periodic_sample_into(&self, eps: f64, x: &[f64], out: &mut [f64]) {
        let mut y = vec![0.0; self.n];
        self.dilate_into(1.0 / eps, x, &mut y);
        self.reduce_into(&y, out);
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dim("frame point", self.n, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("point has non-finite coordinates".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LicReport {
    pub samples: usize,
    pub degenerate: usize,
    pub fraction_degenerate: f64,
    pub min_det: f64,
}

/// `k` with `v + 2k ∈ [-1, 1)`, i.e. `-floor((v + 1) / 2)`.
fn lattice_index(v: f64) -> i64 {
    -(math::floor((v + 1.0) / 2.0) as i64)
}

/// `ω(x, y) = ½ Σ_i (x_i y_{s+i} - y_i x_{s+i})`.
fn omega(s: usize, x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..s {
        acc += x[i] * y[s + i] - y[i] * x[s + i];
    }
    0.5 * acc
}

/// Integer vector `k` such that `(2k)·x` lies in `[-1, 1)^n`. The horizontal
/// components are fixed first; the vertical one then absorbs `ω(2k, x)`.
fn heisenberg_reduce_shift(s: usize, x: &[f64]) -> Vec<i64> {
    let n = 2 * s + 1;
    let mut k = vec![0i64; n];
    for j in 0..2 * s {
        k[j] = lattice_index(x[j]);
    }
    let two_k: Vec<f64> = k.iter().map(|v| 2.0 * *v as f64).collect();
    let vertical = x[n - 1] + omega(s, &two_k, x);
    k[n - 1] = lattice_index(vertical);
    k
}

/// `out = (2k)·x`.
fn heisenberg_translate_even(s: usize, k: &[i64], x: &[f64], out: &mut [f64]) {
    let n = 2 * s + 1;
    let two_k: Vec<f64> = k.iter().map(|v| 2.0 * *v as f64).collect();
    for j in 0..2 * s {
        out[j] = two_k[j] + x[j];
    }
    out[n - 1] = two_k[n - 1] + x[n - 1] + omega(s, &two_k, x);
}

/// A point of `H^s`, coordinates `(x_1, ..., x_{2s}, x_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    coords: Vec<f64>,
}

impl GroupPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 || coords.len() % 2 == 0 {
            return Err(Error::Input(format!(
                "Heisenberg points have 2s+1 >= 3 coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("group point has non-finite coordinates".into()));
        }
        Ok(GroupPoint { coords })
    }

    pub fn origin(s: usize) -> Self {
        GroupPoint {
            coords: vec![0.0; 2 * s + 1],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn s(&self) -> usize {
        (self.coords.len() - 1) / 2
    }

    /// Group law `x·y = (x_h + y_h, x_n + y_n + ω(x, y))`.
    pub fn mul(&self, other: &GroupPoint) -> Result<GroupPoint> {
        if self.coords.len() != other.coords.len() {
            return Err(Error::dim("group law", self.coords.len(), other.coords.len()));
        }
        let s = self.s();
        let n = self.coords.len();
        let mut out: Vec<f64> = self.coords.iter().zip(&other.coords).map(|(a, b)| a + b).collect();
        out[n - 1] += omega(s, &self.coords, &other.coords);
        Ok(GroupPoint { coords: out })
    }

    pub fn inverse(&self) -> GroupPoint {
        GroupPoint {
            coords: self.coords.iter().map(|v| -v).collect(),
        }
    }

    /// Intrinsic dilation `δ_λ(x) = (λ x_h, λ² x_n)`.
    pub fn dilate(&self, lambda: f64) -> Result<GroupPoint> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Input(format!("dilation factor must be positive, got {lambda}")));
        }
        let n = self.coords.len();
        let mut out: Vec<f64> = self.coords.iter().map(|v| lambda * v).collect();
        out[n - 1] = lambda * lambda * self.coords[n - 1];
        Ok(GroupPoint { coords: out })
    }

    /// Returns `(r, k)` with `r = (2k)·x ∈ [-1, 1)^n`.
    pub fn reduce(&self) -> (GroupPoint, Vec<i64>) {
        let s = self.s();
        let k = heisenberg_reduce_shift(s, &self.coords);
        let mut out = vec![0.0; self.coords.len()];
        heisenberg_translate_even(s, &k, &self.coords, &mut out);
        (GroupPoint { coords: out }, k)
    }

    /// `(2k)·x` for an integer vector `k`.
    pub fn translate_even(&self, k: &[i64]) -> Result<GroupPoint> {
        if k.len() != self.coords.len() {
            return Err(Error::dim("lattice vector", self.coords.len(), k.len()));
        }
        let mut out = vec![0.0; self.coords.len()];
        heisenberg_translate_even(self.s(), k, &self.coords, &mut out);
        Ok(GroupPoint { coords: out })
    }
}

/// `x ↦ ⟨η, π_m(x)⟩ + a`, where `π_m` keeps the first `m` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HAffine {
    pub eta: Vec<f64>,
    pub offset: f64,
}

impl HAffine {
    pub fn new(eta: Vec<f64>, offset: f64) -> Self {
        HAffine { eta, offset }
    }

    pub fn linear(eta: Vec<f64>) -> Self {
        HAffine { eta, offset: 0.0 }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.eta.len() {
            return Err(Error::dim("H-affine argument", self.eta.len(), x.len()));
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        math::dot(&self.eta, &x[..self.eta.len()]) + self.offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp(c: &[f64]) -> GroupPoint {
        GroupPoint::new(c.to_vec()).unwrap()
    }

    #[test]
    fn heisenberg_coefficients() {
        let h = Frame::heisenberg(1).unwrap();
        let c0 = h.eval_coefficients(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c0.as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c = h.eval_coefficients(&[2.0, 4.0, 7.0]).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0, -2.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn euclidean_coefficients_are_identity() {
        let e = Frame::euclidean(3).unwrap();
        let c = e.eval_coefficients(&[0.3, -9.0, 1e6]).unwrap();
        assert_eq!(c, Matrix::identity(3));
    }

    #[test]
    fn coefficient_dimension_mismatch() {
        let h = Frame::heisenberg(1).unwrap();
        assert!(matches!(h.eval_coefficients(&[0.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gram_examples() {
        let h = Frame::heisenberg(1).unwrap();
        let (b, det) = h.gram_matrix(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(b, Matrix::identity(2));
        assert_eq!(det, 1.0);

        // C = [[1,0,-2],[0,1,1]]: C C^T = [[5,-2],[-2,2]], det 6
        let (b, det) = h.gram_matrix(&[2.0, 4.0, 7.0]).unwrap();
        assert_eq!(b.as_slice(), &[5.0, -2.0, -2.0, 2.0]);
        assert!((det - 6.0).abs() < 1e-12);

        let g = Frame::grushin();
        let (b, det) = g.gram_matrix(&[0.0, 0.5]).unwrap();
        assert_eq!(b.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(det, 0.0);
    }

    #[test]
    fn group_law_examples() {
        let p = gp(&[1.0, 0.0, 0.0]).mul(&gp(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(p.coords(), &[1.0, 1.0, 0.5]);
        let a = gp(&[0.3, -2.0, 5.0]);
        assert_eq!(a.mul(&GroupPoint::origin(1)).unwrap(), a);
        let q = gp(&[1.0, 2.0, 3.0]).mul(&gp(&[-1.0, -2.0, -3.0])).unwrap();
        assert_eq!(q.coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn group_law_dimension_mismatch() {
        let a = gp(&[1.0, 0.0, 0.0]);
        let b = gp(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(a.mul(&b).is_err());
        assert!(GroupPoint::new(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn dilation_examples() {
        let x = gp(&[1.0, 1.0, 1.0]);
        assert_eq!(x.dilate(2.0).unwrap().coords(), &[2.0, 2.0, 4.0]);
        assert_eq!(x.dilate(1.0).unwrap(), x);
        let y = gp(&[0.7, -1.3, 2.9]);
        assert_eq!(y.dilate(2.0).unwrap().dilate(0.5).unwrap(), y);
        assert!(x.dilate(0.0).is_err());
        assert!(x.dilate(-1.0).is_err());
    }

    #[test]
    fn reduction_examples() {
        let (r, k) = gp(&[2.5, 0.0, 0.0]).reduce();
        assert_eq!(r.coords(), &[0.5, 0.0, 0.0]);
        assert_eq!(k, vec![-1, 0, 0]);

        let (r, k) = GroupPoint::origin(1).reduce();
        assert_eq!(r.coords(), &[0.0, 0.0, 0.0]);
        assert_eq!(k, vec![0, 0, 0]);
    }

    /// Brute-force search over small lattice vectors for the translate that lands
    /// in the fundamental box.
    #[test]
    fn reduction_matches_exhaustive_search() {
        let x = gp(&[1.5, 1.0, 0.2]);
        let mut hits = Vec::new();
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                for c in -3i64..=3 {
                    let t = x.translate_even(&[a, b, c]).unwrap();
                    if t.coords().iter().all(|v| (-1.0..1.0).contains(v)) {
                        hits.push((t, vec![a, b, c]));
                    }
                }
            }
        }
        assert_eq!(hits.len(), 1);
        let (r, k) = x.reduce();
        assert_eq!(k, hits[0].1);
        assert_eq!(k, vec![-1, -1, 0]);
        for (got, want) in r.coords().iter().zip([-0.5, -1.0, 0.7]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn reduction_is_idempotent() {
        let (r, _) = gp(&[3.7, -8.2, 11.1]).reduce();
        let (rr, k) = r.reduce();
        assert_eq!(rr, r);
        assert_eq!(k, vec![0, 0, 0]);
    }

    #[test]
    fn h_affine_examples() {
        let l = HAffine::linear(vec![1.0, 2.0]);
        assert_eq!(l.eval(&[3.0, 4.0, 100.0]).unwrap(), 11.0);
        let c = HAffine::new(vec![0.0, 0.0], 5.0);
        assert_eq!(c.eval(&[-1.0, 9.0, 2.0]).unwrap(), 5.0);
        assert!(l.eval(&[1.0]).is_err());
    }

    #[test]
    fn h_affine_has_constant_horizontal_gradient() {
        // C(x) applied to the Euclidean gradient (η_1, η_2, 0) of l_η.
        let h = Frame::heisenberg(1).unwrap();
        let eta = [1.0, 0.0];
        for x in [[0.0, 0.0, 0.0], [3.0, -2.0, 9.0], [-0.4, 0.25, -7.0]] {
            let c = h.eval_coefficients(&x).unwrap();
            let mut xu = [0.0; 2];
            c.mul_vec(&[eta[0], eta[1], 0.0], &mut xu);
            assert_eq!(xu, eta);
        }
    }

    #[test]
    fn frame_tags() {
        assert_eq!(Frame::from_tag("euclidean:3").unwrap().m(), 3);
        assert_eq!(Frame::from_tag("heisenberg:2").unwrap().n(), 5);
        assert_eq!(Frame::from_tag("grushin").unwrap().kind(), FrameKind::Grushin);
        assert!(Frame::from_tag("heisenberg:0").is_err());
        assert!(Frame::from_tag("carnot:2").is_err());
    }

    #[test]
    fn euclidean_reduction_is_mod_two() {
        let e = Frame::euclidean(2).unwrap();
        let mut out = [0.0; 2];
        e.reduce_into(&[2.0, -3.5], &mut out);
        assert_eq!(out, [0.0, 0.5]);
        e.periodic_sample_into(0.25, &[0.5, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn custom_frame_uses_callback() {
        let f = Frame::custom(
            2,
            1,
            1.0,
            Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = 1.0;
                out[1] = x[0];
            }),
        )
        .unwrap();
        let c = f.eval_coefficients(&[3.0, 0.0]).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 3.0]);
    }
}
