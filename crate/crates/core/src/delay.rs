//! Logic-depth delay model for one LSTM cell operation, the bundled
//! reference delay table, and operation counts.
//!
//! # Structural model
//!
//! For `A` activation levels and `W` weight levels (both binarized), with
//! `n = vector_len`:
//!
//! ```text
//! pass     = t_xnor + ceil(log2 n) * t_full_adder + t_scale_mult
//! residual = t_scale_mult + t_add_fp
//! delay    = max(W * pass, pass + (A - 1) * residual)
//!          + (A*W - 1) * t_add_fp      // accumulate the A*W scaled partials
//!          + t_add_fp                  // bias
//!          + t_lut                     // activation table
//! ```
//!
//! Weight planes are streamed one level per pass; each pass runs an xnor
//! stage, a popcount adder tree and the scale multiply, with all activation
//! levels in parallel. Activation planes are produced on line by the
//! residual recurrence, one subtract-and-scale per extra level, overlapping
//! the weight passes. The level-pair partial products are then summed
//! serially, the bias is added and the activation looked up.
//!
//! When either operand is full precision the product runs on a single MAC
//! unit per output:
//!
//! ```text
//! delay = n * (t_mult_fp + k * t_add_fp) + t_add_fp + t_lut
//! ```
//!
//! where `k` is the level count of the binarized operand (`k = 1` when both
//! are full precision).
//!
//! Units are opaque. The model is judged ordinally against the reference
//! table, never by absolute value.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Bit levels of one operand, or full precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Levels(usize),
    Full,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Levels(n) => write!(f, "{n}"),
            Precision::Full => f.write_str("FP"),
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("fp") {
            return Ok(Precision::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Precision::Levels(n)),
            _ => Err(Error::InvalidArgument(format!(
                "expected a level count >= 1 or \"fp\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDelayParams {
    pub t_xnor: f64,
    pub t_full_adder: f64,
    pub t_mult_fp: f64,
    pub t_add_fp: f64,
    pub t_lut: f64,
    pub t_scale_mult: f64,
    pub vector_len: usize,
    pub hidden: usize,
}

const REAL_KEYS: [&str; 6] = [
    "t_xnor",
    "t_full_adder",
    "t_mult_fp",
    "t_add_fp",
    "t_lut",
    "t_scale_mult",
];
const INT_KEYS: [&str; 2] = ["vector_len", "hidden"];

impl Default for GateDelayParams {
    /// Calibration whose ordering over the 5x5 binarized grid agrees with
    /// the reference table. `vector_len` is 32 inputs + 100 hidden units.
    fn default() -> Self {
        GateDelayParams {
            t_xnor: 1.1,
            t_full_adder: 1.8,
            t_mult_fp: 6.0,
            t_add_fp: 1.0,
            t_lut: 2.0,
            t_scale_mult: 4.5,
            vector_len: 132,
            hidden: 100,
        }
    }
}

impl GateDelayParams {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in self.reals() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{k} must be positive, got {v}")));
            }
        }
        if self.vector_len == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("vector_len and hidden must be positive".into()));
        }
        Ok(())
    }

    fn reals(&self) -> [(&'static str, f64); 6] {
        [
            ("t_xnor", self.t_xnor),
            ("t_full_adder", self.t_full_adder),
            ("t_mult_fp", self.t_mult_fp),
            ("t_add_fp", self.t_add_fp),
            ("t_lut", self.t_lut),
            ("t_scale_mult", self.t_scale_mult),
        ]
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let bad = || Error::InvalidArgument(format!("calibration line {line}: bad value {value:?} for {key}"));
        if INT_KEYS.contains(&key) {
            let v: usize = value.parse().map_err(|_| bad())?;
            match key {
                "vector_len" => self.vector_len = v,
                _ => self.hidden = v,
            }
            return Ok(());
        }
        if !REAL_KEYS.contains(&key) {
            return Err(Error::InvalidArgument(format!(
                "calibration line {line}: unknown key {key:?}"
            )));
        }
        let v: f64 = value.parse().map_err(|_| bad())?;
        match key {
            "t_xnor" => self.t_xnor = v,
            "t_full_adder" => self.t_full_adder = v,
            "t_mult_fp" => self.t_mult_fp = v,
            "t_add_fp" => self.t_add_fp = v,
            "t_lut" => self.t_lut = v,
            _ => self.t_scale_mult = v,
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors.
    pub fn parse_calibration(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("calibration line {}: expected key = value", i + 1)))?;
            p.set(k.trim(), v.trim(), i + 1)?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load_calibration(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_calibration(&text)
    }

    pub fn to_calibration(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.reals() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("vector_len = {}\nhidden = {}\n", self.vector_len, self.hidden));
        s
    }
}

fn ceil_log2(n: usize) -> u32 {
    n.next_power_of_two().trailing_zeros()
}

/// Modelled delay of one cell operation; see the module docs.
pub fn estimate_delay(act: Precision, weight: Precision, p: &GateDelayParams) -> Result<f64> {
    p.validate()?;
    let n = p.vector_len as f64;
    let tail = p.t_add_fp + p.t_lut;
    let d = match (act, weight) {
        (Precision::Levels(0), _) | (_, Precision::Levels(0)) => {
            return Err(Error::InvalidArgument("level counts start at 1".into()));
        }
        (Precision::Levels(a), Precision::Levels(w)) => {
            let (a, w) = (a as f64, w as f64);
            let pass = p.t_xnor + f64::from(ceil_log2(p.vector_len)) * p.t_full_adder + p.t_scale_mult;
            let residual = p.t_scale_mult + p.t_add_fp;
            (w * pass).max(pass + (a - 1.0) * residual) + (a * w - 1.0) * p.t_add_fp + tail
        }
        (Precision::Full, Precision::Full) => n * (p.t_mult_fp + p.t_add_fp) + tail,
        (Precision::Full, Precision::Levels(k)) | (Precision::Levels(k), Precision::Full) => {
            n * (p.t_mult_fp + k as f64 * p.t_add_fp) + tail
        }
    };
    Ok(d)
}

/// Reference cell-operation delays for `(activation, weight)` levels 1..=5
/// and full precision, in the units they were published in.
pub const REFERENCE_DELAYS: [[f64; 6]; 6] = [
    [0.042, 0.066, 0.089, 0.120, 0.160, 4.262],
    [0.054, 0.067, 0.090, 0.121, 0.161, 4.263],
    [0.059, 0.072, 0.091, 0.122, 0.162, 4.264],
    [0.066, 0.079, 0.098, 0.123, 0.163, 4.265],
    [0.075, 0.088, 0.107, 0.132, 0.164, 4.266],
    [1.065, 1.079, 1.098, 1.123, 1.154, 4.294],
];

/// Rows are activation precision, columns weight precision; index 5 is FP.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayReference {
    grid: [[f64; 6]; 6],
}

impl DelayReference {
    /// Validates that values strictly increase along every row and column.
    pub fn new(grid: [[f64; 6]; 6]) -> Result<Self> {
        for r in 0..6 {
            for c in 0..6 {
                let v = grid[r][c];
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "delay table ({r},{c}) = {v} is not positive"
                    )));
                }
                if c > 0 && grid[r][c - 1] >= v {
                    return Err(Error::InvalidArgument(format!(
                        "delay table row {r} not increasing at column {c}"
                    )));
                }
                if r > 0 && grid[r - 1][c] >= v {
                    return Err(Error::InvalidArgument(format!(
                        "delay table column {c} not increasing at row {r}"
                    )));
                }
            }
        }
        Ok(DelayReference { grid })
    }

    pub fn bundled() -> Self {
        Self::new(REFERENCE_DELAYS).expect("bundled table is monotone")
    }

    pub const AXIS: [Precision; 6] = [
        Precision::Levels(1),
        Precision::Levels(2),
        Precision::Levels(3),
        Precision::Levels(4),
        Precision::Levels(5),
        Precision::Full,
    ];

    fn index(p: Precision) -> Result<usize> {
        match p {
            Precision::Levels(n @ 1..=5) => Ok(n - 1),
            Precision::Full => Ok(5),
            Precision::Levels(n) => Err(Error::InvalidArgument(format!(
                "level {n} is outside the reference grid (1..=5, FP)"
            ))),
        }
    }

    pub fn get(&self, act: Precision, weight: Precision) -> Result<f64> {
        Ok(self.grid[Self::index(act)?][Self::index(weight)?])
    }

    /// `delay(FP, FP) / delay(act, weight)`.
    pub fn speedup(&self, act: Precision, weight: Precision) -> Result<f64> {
        Ok(self.grid[5][5] / self.get(act, weight)?)
    }

    /// `delay(act, FP) / delay(act, weight)`: the same activation precision
    /// against full-precision weights.
    pub fn speedup_vs_fp_weights(&self, act: Precision, weight: Precision) -> Result<f64> {
        Ok(self.get(act, Precision::Full)? / self.get(act, weight)?)
    }
}

pub fn table_speedup(reference: &DelayReference, act: Precision, weight: Precision) -> Result<f64> {
    reference.speedup(act, weight)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellDims {
    pub input: usize,
    pub hidden: usize,
}

/// Per-step operation counts for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpsCount {
    /// Plane-pair xnor-popcount dot products in the gate matmuls.
    pub binary_dots: u64,
    /// Total bits fed through xnor-popcount by those dots.
    pub popcount_bits: u64,
    /// Per-element level-pair xnors of the multi-level pointwise products.
    pub pointwise_xnors: u64,
    /// Multiplications by a pair scale `γ`.
    pub scale_mults: u64,
    /// Real multiplications in the gate matmuls.
    pub fp_matmul_mults: u64,
    /// Real multiplications in the state update.
    pub fp_pointwise_mults: u64,
}

/// Closed-form counts. Binarized: `8 h A W` binary dots over vectors of
/// length `input` (4 gates) and `hidden` (4 gates), one `γ` multiply per dot.
/// With `binarized_pointwise`, both products of the cell update run as
/// `A x A` level-pair xnors (`2 h A²`, each scaled), leaving only the `h`
/// output multiplies in real arithmetic; otherwise all `3 h` pointwise
/// products are real. Any full-precision operand makes the matmuls real:
/// `4 h (input + hidden)` multiplies.
pub fn ops_count(act: Precision, weight: Precision, dims: CellDims, binarized_pointwise: bool) -> OpsCount {
    let h = dims.hidden as u64;
    let n = dims.input as u64;
    match (act, weight) {
        (Precision::Levels(a), Precision::Levels(w)) => {
            let (a, w) = (a as u64, w as u64);
            let pairs = a * w;
            let pointwise = if binarized_pointwise { 2 * h * a * a } else { 0 };
            OpsCount {
                binary_dots: 8 * h * pairs,
                popcount_bits: 4 * h * pairs * (n + h),
                pointwise_xnors: pointwise,
                scale_mults: 8 * h * pairs + pointwise,
                fp_matmul_mults: 0,
                fp_pointwise_mults: if binarized_pointwise { h } else { 3 * h },
            }
        }
        _ => OpsCount {
            fp_matmul_mults: 4 * h * (n + h),
            fp_pointwise_mults: 3 * h,
            ..OpsCount::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Precision::{Full, Levels};

    #[test]
    fn ordering_follows_level_products() {
        let p = GateDelayParams::default();
        let d = |a, w| estimate_delay(Levels(a), Levels(w), &p).unwrap();
        assert!(d(1, 1) < d(3, 3) && d(3, 3) < d(5, 5));
    }

    #[test]
    fn single_level_formula() {
        let p = GateDelayParams {
            t_scale_mult: 1e-300,
            ..GateDelayParams::default()
        };
        let want = p.t_xnor + 8.0 * p.t_full_adder + p.t_add_fp + p.t_lut;
        let got = estimate_delay(Levels(1), Levels(1), &p).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn strictly_increasing_in_parameters_on_path() {
        let base = GateDelayParams::default();
        let bump = |f: &dyn Fn(&mut GateDelayParams)| {
            let mut p = base.clone();
            f(&mut p);
            p
        };
        let variants: Vec<(&str, GateDelayParams)> = vec![
            ("t_xnor", bump(&|p| p.t_xnor *= 1.5)),
            ("t_full_adder", bump(&|p| p.t_full_adder *= 1.5)),
            ("t_add_fp", bump(&|p| p.t_add_fp *= 1.5)),
            ("t_lut", bump(&|p| p.t_lut *= 1.5)),
            ("t_scale_mult", bump(&|p| p.t_scale_mult *= 1.5)),
        ];
        for a in 1..=5 {
            for w in 1..=5 {
                let d0 = estimate_delay(Levels(a), Levels(w), &base).unwrap();
                for (name, p) in &variants {
                    assert!(
                        estimate_delay(Levels(a), Levels(w), p).unwrap() > d0,
                        "{name} at ({a},{w})"
                    );
                }
                if a < 5 {
                    assert!(estimate_delay(Levels(a + 1), Levels(w), &base).unwrap() > d0);
                }
                if w < 5 {
                    assert!(estimate_delay(Levels(a), Levels(w + 1), &base).unwrap() > d0);
                }
            }
        }
        let fp = estimate_delay(Full, Full, &base).unwrap();
        let slower = GateDelayParams {
            t_mult_fp: 7.0,
            ..base.clone()
        };
        assert!(estimate_delay(Full, Full, &slower).unwrap() > fp);
        assert!(fp > estimate_delay(Levels(5), Levels(5), &base).unwrap());
    }

    #[test]
    fn rejects_bad_params() {
        let p = GateDelayParams {
            t_lut: 0.0,
            ..GateDelayParams::default()
        };
        assert!(estimate_delay(Levels(1), Levels(1), &p).is_err());
        assert!(estimate_delay(Levels(0), Levels(1), &GateDelayParams::default()).is_err());
    }

    #[test]
    fn calibration_round_trip_and_errors() {
        let p = GateDelayParams {
            t_lut: 3.25,
            hidden: 7,
            ..GateDelayParams::default()
        };
        assert_eq!(GateDelayParams::parse_calibration(&p.to_calibration()).unwrap(), p);
        let partial = GateDelayParams::parse_calibration("# comment\n\nt_xnor = 2\n").unwrap();
        assert_eq!(partial.t_xnor, 2.0);
        let err = GateDelayParams::parse_calibration("t_bogus = 1")
            .unwrap_err()
            .to_string();
        assert!(err.contains("t_bogus"), "{err}");
        assert!(GateDelayParams::parse_calibration("t_xnor 1").is_err());
        assert!(GateDelayParams::parse_calibration("t_xnor = -1").is_err());
        assert!(GateDelayParams::parse_calibration("vector_len = 1.5").is_err());
    }

    #[test]
    fn reference_table_speedups() {
        let r = DelayReference::bundled();
        assert!((r.speedup(Levels(3), Levels(3)).unwrap() - 4.294 / 0.091).abs() < 1e-12);
        assert!((r.speedup(Levels(1), Levels(1)).unwrap() - 102.238).abs() < 1e-3);
        assert_eq!(r.speedup(Full, Full).unwrap(), 1.0);
        assert!((r.speedup_vs_fp_weights(Levels(3), Levels(3)).unwrap() - 46.857).abs() < 1e-3);
        assert!(r.get(Levels(6), Levels(1)).is_err());
    }

    #[test]
    fn reference_validation_catches_transcription_errors() {
        let mut g = REFERENCE_DELAYS;
        g[2][3] = 0.2;
        assert!(DelayReference::new(g).is_err());
        let mut g = REFERENCE_DELAYS;
        g[4][0] = 0.06;
        assert!(DelayReference::new(g).is_err());
    }

    #[test]
    fn ops_examples() {
        let dims = CellDims { input: 1, hidden: 1 };
        let c = ops_count(Levels(1), Levels(1), dims, false);
        assert_eq!(c.binary_dots, 8);
        assert_eq!(c.fp_matmul_mults, 0);

        let large = CellDims { input: 32, hidden: 100 };
        let fp = ops_count(Full, Full, large, false);
        assert_eq!(fp.fp_matmul_mults, 4 * 100 * 32 + 4 * 100 * 100);
        assert_eq!(fp.fp_pointwise_mults, 300);

        let c1 = ops_count(Levels(1), Levels(1), large, true);
        let c3 = ops_count(Levels(3), Levels(3), large, true);
        assert_eq!(c3.binary_dots, 9 * c1.binary_dots);
        assert_eq!(c3.pointwise_xnors, 2 * 100 * 9);
    }

    #[test]
    fn precision_parsing() {
        assert_eq!("fp".parse::<Precision>().unwrap(), Full);
        assert_eq!("FP".parse::<Precision>().unwrap(), Full);
        assert_eq!("3".parse::<Precision>().unwrap(), Levels(3));
        assert!("0".parse::<Precision>().is_err());
        assert!("x".parse::<Precision>().is_err());
    }
}
