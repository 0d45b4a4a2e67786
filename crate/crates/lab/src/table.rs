//! Custom frames from coefficient tables.
//!
//! Format: a header line `n m`, then one row per sample node with `n` coordinates
//! followed by the `m*n` entries of `C(x)` in row-major order. The nodes must form a
//! tensor grid; `C` is looked up at the nearest node. Blank lines and lines starting
//! with `#` are skipped.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use subvar_core::frame::CoefficientField;
use subvar_core::Frame;

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTable {
    n: usize,
    m: usize,
    /// Sorted distinct coordinates per axis.
    axes: Vec<Vec<f64>>,
    /// Row-major `m x n` blocks in lexicographic node order, axis 0 fastest.
    values: Vec<f64>,
}

impl CoefficientTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().context("coefficient table is empty")?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("line {hl}: header must be `n m`"))?;
        let [n, m] = dims[..] else {
            bail!("line {hl}: header must be `n m`");
        };
        if n == 0 || m == 0 || m > n {
            bail!("line {hl}: need 1 <= m <= n, got n = {n}, m = {m}");
        }
        let width = n + m * n;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (ln, l) in lines {
            let row: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("line {ln}: not a number"))?;
            if row.len() != width {
                bail!("line {ln}: expected {width} columns, found {}", row.len());
            }
            if row.iter().any(|v| !v.is_finite()) {
                bail!("line {ln}: non-finite entry");
            }
            rows.push(row);
        }
        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); n];
        for row in &rows {
            for d in 0..n {
                axes[d].push(row[d]);
            }
        }
        for a in axes.iter_mut() {
            a.sort_by(f64::total_cmp);
            a.dedup();
        }
        let count: usize = axes.iter().map(Vec::len).product();
        if count != rows.len() {
            bail!("table nodes do not form a tensor grid ({} rows for {count} grid nodes)", rows.len());
        }
        let mut values = vec![f64::NAN; count * m * n];
        for row in &rows {
            let mut idx = 0;
            let mut stride = 1;
            for d in 0..n {
                let k = axes[d].binary_search_by(|v| v.total_cmp(&row[d])).expect("coordinate present");
                idx += k * stride;
                stride *= axes[d].len();
            }
            let block = &mut values[idx * m * n..(idx + 1) * m * n];
            if !block[0].is_nan() {
                bail!("duplicate table node {:?}", &row[..n]);
            }
            block.copy_from_slice(&row[n..]);
        }
        Ok(CoefficientTable { n, m, axes, values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn nearest(axis: &[f64], v: f64) -> usize {
        match axis.binary_search_by(|a| a.total_cmp(&v)) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k == axis.len() => k - 1,
            Err(k) => {
                if v - axis[k - 1] <= axis[k] - v {
                    k - 1
                } else {
                    k
                }
            }
        }
    }

    fn node_index(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for d in 0..self.n {
            idx += Self::nearest(&self.axes[d], x[d]) * stride;
            stride *= self.axes[d].len();
        }
        idx
    }

    /// Largest difference quotient of `C` between neighbouring nodes.
    pub fn lipschitz_estimate(&self) -> f64 {
        let block = self.m * self.n;
        let mut worst = 0.0f64;
        let mut stride = 1;
        let count = self.values.len() / block;
        for d in 0..self.n {
            let len = self.axes[d].len();
            for i in 0..count {
                let k = (i / stride) % len;
                if k + 1 == len {
                    continue;
                }
                let j = i + stride;
                let dx = self.axes[d][k + 1] - self.axes[d][k];
                let diff = (0..block)
                    .map(|b| (self.values[i * block + b] - self.values[j * block + b]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(diff / dx);
            }
            stride *= len;
        }
        worst
    }

    pub fn into_frame(self) -> Result<Frame> {
        let (n, m, lip) = (self.n, self.m, self.lipschitz_estimate());
        Ok(Frame::custom(n, m, lip, Arc::new(self))?)
    }
}

impl CoefficientField for CoefficientTable {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let block = self.m * self.n;
        let i = self.node_index(x);
        out.copy_from_slice(&self.values[i * block..(i + 1) * block]);
    }
}
