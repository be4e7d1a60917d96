//! Piecewise-linear lookup tables for sigmoid and tanh.
//!
//! A table holds the exact function value at `S + 1` uniformly spaced
//! breakpoints on `[-hi, hi]`. Inside the domain values are linearly
//! interpolated; outside they saturate at the boundary node. Breakpoint `k`
//! is `(2k - S) / S * hi`, which is exactly antisymmetric in `k`, so the
//! table inherits the function's symmetry at every node.

use crate::error::{Error, Result};
use crate::lstm::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub fn exact(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Default half-width of the tabulated domain.
    pub fn default_half_width(self) -> f64 {
        match self {
            ActivationKind::Sigmoid => 8.0,
            ActivationKind::Tanh => 4.0,
        }
    }
}

pub const DEFAULT_SEGMENTS: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct PwlTable {
    kind: ActivationKind,
    hi: f64,
    segments: usize,
    nodes: Vec<f64>,
}

impl PwlTable {
    /// Table on `[-half_width, half_width]` with `segments` equal intervals.
    pub fn build(kind: ActivationKind, segments: usize, half_width: f64) -> Result<Self> {
        if segments < 2 {
            return Err(Error::InvalidArgument(format!(
                "LUT needs at least 2 segments, got {segments}"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "LUT domain half-width must be positive, got {half_width}"
            )));
        }
        let nodes = (0..=segments)
            .map(|k| kind.exact(breakpoint(k, segments, half_width)))
            .collect();
        Ok(PwlTable {
            kind,
            hi: half_width,
            segments,
            nodes,
        })
    }

    /// Sigmoid on `[-8, 8]` or tanh on `[-4, 4]`, 128 segments.
    pub fn default_for(kind: ActivationKind) -> Self {
        Self::build(kind, DEFAULT_SEGMENTS, kind.default_half_width()).expect("defaults are valid")
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn domain(&self) -> (f64, f64) {
        (-self.hi, self.hi)
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn breakpoint(&self, k: usize) -> f64 {
        breakpoint(k, self.segments, self.hi)
    }

    pub fn eval(&self, v: f64) -> f64 {
        if v <= -self.hi {
            return self.nodes[0];
        }
        if v >= self.hi {
            return self.nodes[self.segments];
        }
        let u = (v + self.hi) / (2.0 * self.hi) * self.segments as f64;
        let k = (u.floor() as usize).min(self.segments - 1);
        let t = u - k as f64;
        if t == 0.0 {
            return self.nodes[k];
        }
        self.nodes[k] + t * (self.nodes[k + 1] - self.nodes[k])
    }
}

fn breakpoint(k: usize, segments: usize, hi: f64) -> f64 {
    (2.0 * k as f64 - segments as f64) / segments as f64 * hi
}
