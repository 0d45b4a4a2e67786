//! Tensor grids on boxes, nodal and cell-centred fields, and the discrete X-gradient.
//!
//! Nodes sit at cell corners and are numbered lexicographically with axis 0 fastest.
//! Gradient samples ("sites") sit at cell centres: `Du` there is the average of the
//! forward differences along the cell edges parallel to each axis, and
//! `Xu = C(centre) Du`. Nodal integrals use the tensor trapezoid rule, site integrals
//! the midpoint rule.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, HAffine};
use crate::math;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    res: Vec<usize>,
    h: Vec<f64>,
    node_strides: Vec<usize>,
    node_count: usize,
    cell_strides: Vec<usize>,
    cell_count: usize,
    cell_volume: f64,
    node_weights: Vec<f64>,
    boundary: Vec<bool>,
}

/// Samples handed to [`Grid::integrate`].
#[derive(Clone, Copy, Debug)]
pub enum Samples<'a> {
    Nodal(&'a [f64]),
    Sites(&'a [f64]),
}

impl Grid {
    pub fn new(lo: &[f64], hi: &[f64], res: &[usize]) -> Result<Self> {
        let n = lo.len();
        if n == 0 {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        if hi.len() != n {
            return Err(Error::dim("grid upper corner", n, hi.len()));
        }
        if res.len() != n {
            return Err(Error::dim("grid resolution", n, res.len()));
        }
        for d in 0..n {
            if !(lo[d] < hi[d]) || !lo[d].is_finite() || !hi[d].is_finite() {
                return Err(Error::Config(format!("axis {d}: need finite lo < hi, got ({}, {})", lo[d], hi[d])));
            }
            if res[d] < 2 {
                return Err(Error::Config(format!("axis {d}: resolution must be >= 2, got {}", res[d])));
            }
        }
        let h: Vec<f64> = (0..n).map(|d| (hi[d] - lo[d]) / res[d] as f64).collect();

        let mut node_strides = vec![1usize; n];
        let mut cell_strides = vec![1usize; n];
        for d in 1..n {
            node_strides[d] = node_strides[d - 1] * (res[d - 1] + 1);
            cell_strides[d] = cell_strides[d - 1] * res[d - 1];
        }
        let node_count = node_strides[n - 1] * (res[n - 1] + 1);
        let cell_count = cell_strides[n - 1] * res[n - 1];
        let cell_volume: f64 = h.iter().product();

        let mut node_weights = vec![1.0; node_count];
        let mut boundary = vec![false; node_count];
        for (i, (w, b)) in node_weights.iter_mut().zip(boundary.iter_mut()).enumerate() {
            for d in 0..n {
                let k = (i / node_strides[d]) % (res[d] + 1);
                let edge = k == 0 || k == res[d];
                *w *= if edge { 0.5 * h[d] } else { h[d] };
                *b |= edge;
            }
        }

        Ok(Grid {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            res: res.to_vec(),
            h,
            node_strides,
            node_count,
            cell_strides,
            cell_count,
            cell_volume,
            node_weights,
            boundary,
        })
    }

    /// Same number of cells on every axis.
    pub fn uniform(lo: &[f64], hi: &[f64], res: usize) -> Result<Self> {
        Self::new(lo, hi, &vec![res; lo.len()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
    pub fn res(&self) -> &[usize] {
        &self.res
    }
    pub fn spacing(&self) -> &[f64] {
        &self.h
    }
    pub fn node_count(&self) -> usize {
        self.node_count
    }
    pub fn cell_count(&self) -> usize {
        self.cell_count
    }
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }
    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }
    pub fn node_strides(&self) -> &[usize] {
        &self.node_strides
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.boundary.iter().map(|b| !b).collect()
    }

    /// Interior node indices in increasing order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count).filter(|i| !self.boundary[*i]).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn node_coords(&self, i: usize, out: &mut [f64]) {
        for d in 0..self.dim() {
            let k = (i / self.node_strides[d]) % (self.res[d] + 1);
            out[d] = if k == self.res[d] {
                self.hi[d]
            } else {
                self.lo[d] + k as f64 * self.h[d]
            };
        }
    }

    pub fn cell_center(&self, c: usize, out: &mut [f64]) {
        for d in 0..self.dim() {
            let k = (c / self.cell_strides[d]) % self.res[d];
            out[d] = self.lo[d] + (k as f64 + 0.5) * self.h[d];
        }
    }

    /// Node index of the lower corner of cell `c`.
    pub fn cell_base_node(&self, c: usize) -> usize {
        (0..self.dim())
            .map(|d| ((c / self.cell_strides[d]) % self.res[d]) * self.node_strides[d])
            .sum()
    }

    /// All node coordinates, flattened `node_count x dim`.
    pub fn node_coordinates(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; self.node_count * n];
        for i in 0..self.node_count {
            self.node_coords(i, &mut out[i * n..(i + 1) * n]);
        }
        out
    }

    /// All cell centres, flattened `cell_count x dim`.
    pub fn site_coordinates(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; self.cell_count * n];
        for c in 0..self.cell_count {
            self.cell_center(c, &mut out[c * n..(c + 1) * n]);
        }
        out
    }

    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for d in 0..self.dim() {
            let t = (x[d] - self.lo[d]) / self.h[d];
            let k = math::floor(t + 0.5).clamp(0.0, self.res[d] as f64) as usize;
            idx += k * self.node_strides[d];
        }
        idx
    }

    /// Cell containing `x`, clamped to the grid.
    pub fn locate_cell(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for d in 0..self.dim() {
            let t = (x[d] - self.lo[d]) / self.h[d];
            let k = math::floor(t).clamp(0.0, (self.res[d] - 1) as f64) as usize;
            idx += k * self.cell_strides[d];
        }
        idx
    }

    /// Node closest to the centre of the box.
    pub fn center_node(&self) -> usize {
        let c: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        self.nearest_node(&c)
    }

    pub fn integrate(&self, samples: Samples<'_>) -> Result<f64> {
        match samples {
            Samples::Nodal(v) => {
                if v.len() != self.node_count {
                    return Err(Error::dim("nodal samples", self.node_count, v.len()));
                }
                Ok(self.integrate_nodal(v))
            }
            Samples::Sites(v) => {
                if v.len() != self.cell_count {
                    return Err(Error::dim("site samples", self.cell_count, v.len()));
                }
                Ok(self.integrate_sites(v))
            }
        }
    }

    pub(crate) fn integrate_nodal(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.node_weights).map(|(a, w)| a * w).sum()
    }

    pub(crate) fn integrate_sites(&self, v: &[f64]) -> f64 {
        self.cell_volume * v.iter().sum::<f64>()
    }

    pub(crate) fn same_as(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other) || **self == **other
    }
}

/// Scalar samples on the nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::dim("nodal field", grid.node_count(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("nodal field has non-finite values".into()));
        }
        Ok(DiscreteField { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.node_count()];
        DiscreteField { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = grid.dim();
        let mut x = vec![0.0; n];
        let values = (0..grid.node_count())
            .map(|i| {
                grid.node_coords(i, &mut x);
                f(&x)
            })
            .collect();
        DiscreteField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate_nodal(&self.values)
    }

    /// Trapezoid-weighted `L^2` distance.
    pub fn l2_distance(&self, other: &DiscreteField) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("fields live on different grids"));
        }
        Ok(l2_nodal(&self.grid, &self.values, &other.values))
    }
}

pub(crate) fn l2_nodal(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(grid.node_weights())
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum();
    math::sqrt(s)
}

/// `m`-vector samples at the cell centres, stored site-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    grid: Arc<Grid>,
    m: usize,
    samples: Vec<f64>,
}

impl GradientField {
    pub fn new(grid: Arc<Grid>, m: usize, samples: Vec<f64>) -> Result<Self> {
        let want = m * grid.cell_count();
        if samples.len() != want {
            return Err(Error::dim("gradient field", want, samples.len()));
        }
        Ok(GradientField { grid, m, samples })
    }

    pub fn zeros(grid: Arc<Grid>, m: usize) -> Self {
        let samples = vec![0.0; m * grid.cell_count()];
        GradientField { grid, m, samples }
    }

    pub fn constant(grid: Arc<Grid>, value: &[f64]) -> Self {
        let m = value.len();
        let mut samples = Vec::with_capacity(m * grid.cell_count());
        for _ in 0..grid.cell_count() {
            samples.extend_from_slice(value);
        }
        GradientField { grid, m, samples }
    }

    /// Samples `f(x_site, out)` at every cell centre.
    pub fn from_fn(grid: Arc<Grid>, m: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let n = grid.dim();
        let mut x = vec![0.0; n];
        let mut samples = vec![0.0; m * grid.cell_count()];
        for c in 0..grid.cell_count() {
            grid.cell_center(c, &mut x);
            f(&x, &mut samples[c * m..(c + 1) * m]);
        }
        GradientField { grid, m, samples }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn site_count(&self) -> usize {
        self.grid.cell_count()
    }
    pub fn site_weight(&self) -> f64 {
        self.grid.cell_volume()
    }
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }
    pub fn site(&self, c: usize) -> &[f64] {
        &self.samples[c * self.m..(c + 1) * self.m]
    }

    /// Value at the site whose cell contains `x`.
    pub fn sample_at(&self, x: &[f64]) -> &[f64] {
        self.site(self.grid.locate_cell(x))
    }

    fn check_compatible(&self, other: &GradientField) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("gradient fields live on different sites"));
        }
        if self.m != other.m {
            return Err(Error::dim("gradient field components", self.m, other.m));
        }
        Ok(())
    }

    /// `Σ_sites w ⟨self, other⟩`.
    pub fn inner(&self, other: &GradientField) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.grid.cell_volume() * math::dot(&self.samples, &other.samples))
    }

    pub fn l2_distance(&self, other: &GradientField) -> Result<f64> {
        self.check_compatible(other)?;
        let s: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(math::sqrt(self.grid.cell_volume() * s))
    }

    /// `(Σ_sites w |φ|^q)^{1/q}` with the Euclidean norm on each site.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let s: f64 = self
            .samples
            .chunks(self.m)
            .map(|v| math::powf(math::norm(v), q))
            .sum();
        math::powf(self.grid.cell_volume() * s, 1.0 / q)
    }

    pub fn sub(&self, other: &GradientField) -> Result<GradientField> {
        self.check_compatible(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect();
        Ok(GradientField {
            grid: self.grid.clone(),
            m: self.m,
            samples,
        })
    }

    pub fn scale(&mut self, s: f64) {
        self.samples.iter_mut().for_each(|v| *v *= s);
    }
}

/// The discrete X-gradient on a grid, together with its exact transpose.
#[derive(Clone, Debug)]
pub struct DiscreteXOperator {
    grid: Arc<Grid>,
    frame: Frame,
    /// `C(centre)` per cell, row-major `m x n`.
    coeffs: Vec<f64>,
    cell_base: Vec<usize>,
    /// Node offsets of the `2^n` corners; bit `d` of the corner index selects the upper
    /// end along axis `d`.
    corners: Vec<usize>,
    /// `1 / (2^{n-1} h_d)`.
    edge_scale: Vec<f64>,
}

impl DiscreteXOperator {
    pub fn new(grid: Arc<Grid>, frame: &Frame) -> Result<Self> {
        let n = grid.dim();
        if frame.n() != n {
            return Err(Error::dim("frame dimension vs grid", n, frame.n()));
        }
        let m = frame.m();
        let cells = grid.cell_count();
        let mut coeffs = vec![0.0; cells * m * n];
        let mut x = vec![0.0; n];
        for c in 0..cells {
            grid.cell_center(c, &mut x);
            frame.coefficients_into(&x, &mut coeffs[c * m * n..(c + 1) * m * n]);
        }
        let cell_base = (0..cells).map(|c| grid.cell_base_node(c)).collect();
        let corners = (0..1usize << n)
            .map(|k| (0..n).filter(|d| k & (1 << d) != 0).map(|d| grid.node_strides()[d]).sum())
            .collect();
        let half_edges = (1usize << (n - 1)) as f64;
        let edge_scale = grid.spacing().iter().map(|h| 1.0 / (half_edges * h)).collect();
        Ok(DiscreteXOperator {
            grid,
            frame: frame.clone(),
            coeffs,
            cell_base,
            corners,
            edge_scale,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn frame(&self) -> &Frame {
        &self.frame
    }
    pub fn m(&self) -> usize {
        self.frame.m()
    }
    pub fn site_count(&self) -> usize {
        self.grid.cell_count()
    }

    /// `C` sampled at cell `c`.
    pub fn cell_coefficients(&self, c: usize) -> &[f64] {
        let mn = self.frame.m() * self.grid.dim();
        &self.coeffs[c * mn..(c + 1) * mn]
    }

    /// Edge-averaged Euclidean gradient on cell `c`.
    fn cell_gradient(&self, c: usize, u: &[f64], du: &mut [f64]) {
        let n = self.grid.dim();
        let base = self.cell_base[c];
        let strides = self.grid.node_strides();
        for d in 0..n {
            let bit = 1usize << d;
            let mut acc = 0.0;
            for (k, off) in self.corners.iter().enumerate() {
                if k & bit == 0 {
                    let lower = base + off;
                    acc += u[lower + strides[d]] - u[lower];
                }
            }
            du[d] = acc * self.edge_scale[d];
        }
    }

    /// `out = X u` on raw slices (`out` has `m * sites` entries).
    pub fn apply_raw(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.dim();
        let m = self.frame.m();
        let mut du = vec![0.0; n];
        for c in 0..self.site_count() {
            self.cell_gradient(c, u, &mut du);
            math::mat_vec(m, n, self.cell_coefficients(c), &du, &mut out[c * m..(c + 1) * m]);
        }
    }

    /// `out = A^T phi` with `A` the plain matrix of [`Self::apply_raw`] (no weights).
    pub fn transpose_raw(&self, phi: &[f64], out: &mut [f64]) {
        let n = self.grid.dim();
        let m = self.frame.m();
        let strides = self.grid.node_strides();
        out.fill(0.0);
        let mut t = vec![0.0; n];
        for c in 0..self.site_count() {
            let cc = self.cell_coefficients(c);
            let p = &phi[c * m..(c + 1) * m];
            for d in 0..n {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += cc[j * n + d] * p[j];
                }
                t[d] = acc * self.edge_scale[d];
            }
            let base = self.cell_base[c];
            for d in 0..n {
                let bit = 1usize << d;
                for (k, off) in self.corners.iter().enumerate() {
                    if k & bit == 0 {
                        let lower = base + off;
                        out[lower + strides[d]] += t[d];
                        out[lower] -= t[d];
                    }
                }
            }
        }
    }

    pub fn apply_x(&self, u: &DiscreteField) -> Result<GradientField> {
        if !self.grid.same_as(u.grid()) {
            return Err(Error::GridMismatch("field and operator live on different grids"));
        }
        let mut samples = vec![0.0; self.m() * self.site_count()];
        self.apply_raw(u.values(), &mut samples);
        Ok(GradientField {
            grid: self.grid.clone(),
            m: self.m(),
            samples,
        })
    }

    /// Adjoint with respect to the weighted products: `⟨Xu, φ⟩_sites = ⟨u, X^T φ⟩_nodes`.
    pub fn apply_x_transpose(&self, phi: &GradientField) -> Result<DiscreteField> {
        if !self.grid.same_as(phi.grid()) {
            return Err(Error::GridMismatch("gradient field and operator live on different sites"));
        }
        if phi.m() != self.m() {
            return Err(Error::dim("gradient field components", self.m(), phi.m()));
        }
        let w = self.grid.cell_volume();
        let weighted: Vec<f64> = phi.samples().iter().map(|v| w * v).collect();
        let mut out = vec![0.0; self.grid.node_count()];
        self.transpose_raw(&weighted, &mut out);
        for (o, wn) in out.iter_mut().zip(self.grid.node_weights()) {
            *o /= wn;
        }
        Ok(DiscreteField {
            grid: self.grid.clone(),
            values: out,
        })
    }

    /// Local `m x 2^n` block of cell `c` (row-major), columns ordered as the corners.
    pub fn local_block(&self, c: usize, out: &mut [f64]) {
        let n = self.grid.dim();
        let m = self.frame.m();
        let nc = self.corners.len();
        let cc = self.cell_coefficients(c);
        for j in 0..m {
            for k in 0..nc {
                let mut v = 0.0;
                for d in 0..n {
                    let sign = if k & (1 << d) != 0 { 1.0 } else { -1.0 };
                    v += cc[j * n + d] * sign * self.edge_scale[d];
                }
                out[j * nc + k] = v;
            }
        }
    }

    /// Node indices of the corners of cell `c`, in corner order.
    pub fn cell_nodes(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let base = self.cell_base[c];
        self.corners.iter().map(move |off| base + off)
    }

    pub fn corner_count(&self) -> usize {
        self.corners.len()
    }

    /// Sparse matrix of the operator (`m * sites` rows, one per site component).
    pub fn matrix(&self) -> CsrMatrix {
        let m = self.m();
        let nc = self.corners.len();
        let mut block = vec![0.0; m * nc];
        let mut triplets = Vec::with_capacity(self.site_count() * m * nc);
        for c in 0..self.site_count() {
            self.local_block(c, &mut block);
            for j in 0..m {
                for (k, node) in self.cell_nodes(c).enumerate() {
                    triplets.push((c * m + j, node, block[j * nc + k]));
                }
            }
        }
        CsrMatrix::from_triplets(m * self.site_count(), self.grid.node_count(), &triplets)
    }
}

/// Boundary datum `φ` of a Dirichlet problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dirichlet {
    Zero,
    Affine(HAffine),
    /// Nodal values; only boundary entries are read.
    Nodal(Vec<f64>),
}

impl Dirichlet {
    /// Full nodal field of the datum (used as the extension of the boundary values).
    pub fn nodal_values(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            Dirichlet::Zero => Ok(vec![0.0; grid.node_count()]),
            Dirichlet::Affine(l) => {
                let n = grid.dim();
                if l.eta.len() > n {
                    return Err(Error::dim("affine datum slope", n, l.eta.len()));
                }
                let mut x = vec![0.0; n];
                Ok((0..grid.node_count())
                    .map(|i| {
                        grid.node_coords(i, &mut x);
                        l.eval_unchecked(&x)
                    })
                    .collect())
            }
            Dirichlet::Nodal(v) => {
                if v.len() != grid.node_count() {
                    return Err(Error::dim("nodal datum", grid.node_count(), v.len()));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Overwrites boundary values of `u` by the datum; interior values are untouched.
pub fn set_dirichlet(u: &DiscreteField, datum: &Dirichlet) -> Result<DiscreteField> {
    let phi = datum.nodal_values(u.grid())?;
    let mut out = u.clone();
    for (i, b) in u.grid().boundary_mask().iter().enumerate() {
        if *b {
            out.values[i] = phi[i];
        }
    }
    Ok(out)
}
