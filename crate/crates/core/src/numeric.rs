//! Dense real tensors and the seeded generator.
//!
//! All reference arithmetic is done in `f64`. Matrices are stored row-major:
//! element `(r, c)` sits at `data[r * cols + c]`.

use std::ops::{Deref, Index};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A non-empty vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("vector must be non-empty".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "element {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(RealVector(data))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector must be non-empty");
        RealVector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(len > 0 && value.is_finite());
        RealVector(vec![value; len])
    }

    /// Wraps data already known to be finite and non-empty.
    pub(crate) fn from_finite(data: Vec<f64>, op: &'static str) -> Result<Self> {
        debug_assert!(!data.is_empty());
        if data.iter().all(|v| v.is_finite()) {
            Ok(RealVector(data))
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for RealVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for RealVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        RealVector::new(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dims(
                "matrix data",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0);
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged matrix rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

/// `out[i] = sum_j m[i][j] * v[j]`.
pub fn matvec(m: &RealMatrix, v: &[f64]) -> Result<RealVector> {
    if m.cols != v.len() {
        return Err(Error::dims(
            "matvec",
            format!("matrix {}x{}", m.rows, m.cols),
            format!("vector of length {}", v.len()),
        ));
    }
    let out = (0..m.rows).map(|r| dot(m.row(r), v)).collect();
    RealVector::from_finite(out, "matvec")
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
}

pub fn elementwise(a: &[f64], b: &[f64], op: ElementwiseOp) -> Result<RealVector> {
    if a.len() != b.len() {
        return Err(Error::dims("elementwise", a.len(), b.len()));
    }
    let out = a
        .iter()
        .zip(b)
        .map(|(x, y)| match op {
            ElementwiseOp::Add => x + y,
            ElementwiseOp::Mul => x * y,
        })
        .collect();
    RealVector::from_finite(out, "elementwise")
}

/// Deterministic generator: ChaCha with 8 rounds, seeded from a `u64` via
/// `SeedableRng::seed_from_u64`. ChaCha8's stream is specified independently
/// of platform and word size, so a seed yields the same values everywhere.
///
/// Uniform draws use the 53 high bits of a `u64` mapped to `[0, 1)`; normal
/// draws use `rand_distr::Normal`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// `n` values in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64, n: usize) -> Result<RealVector> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "uniform range requires lo < hi, got [{lo}, {hi})"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("uniform count must be positive".into()));
        }
        let out = (0..n).map(|_| self.uniform_one(lo, hi)).collect();
        Ok(RealVector(out))
    }

    pub(crate) fn uniform_one(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        // lo + span * u can round up to hi for u close to 1
        if v >= hi {
            hi.next_down()
        } else {
            v
        }
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Result<RealMatrix> {
        let v = self.uniform(lo, hi, rows * cols)?;
        RealMatrix::new(rows, cols, v.into_vec())
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        if std_dev == 0.0 {
            return mean;
        }
        Normal::new(mean, std_dev)
            .expect("std_dev validated by caller")
            .sample(&mut self.inner)
    }

    /// Uniformly random `{-1, +1}` vector.
    pub fn signs(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| if self.inner.random::<bool>() { 1.0 } else { -1.0 })
            .collect()
    }
}
