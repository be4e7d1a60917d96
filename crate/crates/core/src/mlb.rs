//! Sign binarization and multi-level residual binarization.
//!
//! A real tensor `x` is approximated by `N` sign planes and scales:
//!
//! ```text
//! r = x
//! for i in 1..=N:
//!     l_i = bits(sign(r))
//!     r   = r - sign(r) * α_i
//! ```
//!
//! so that `x ≈ Σ_i α_i sign(l_i)`. `sign(0)` is `+1`. Scales are either
//! supplied, or fitted per level as `mean(|r|)`, the least-squares optimum
//! for the fixed sign pattern, optionally rounded to the nearest power of
//! two so scaling becomes a shift.

use crate::bitpack::BinaryPlane;
use crate::error::{Error, Result};
use crate::numeric::RealVector;

/// Scale used for a level whose residual is exactly zero.
pub const SCALE_FLOOR: f64 = 1e-12;

const POW2_MIN_EXP: i32 = -30;
const POW2_MAX_EXP: i32 = 30;

#[derive(Debug, Clone, PartialEq)]
pub enum ScalePolicy {
    /// Externally supplied scales, one per level (e.g. trained).
    Given(Vec<f64>),
    /// `α_i = mean(|r_i|)`.
    Fitted { levels: usize },
    /// `α_i = round_pow2(mean(|r_i|))`.
    FittedPow2 { levels: usize },
}

impl ScalePolicy {
    pub fn levels(&self) -> usize {
        match self {
            ScalePolicy::Given(s) => s.len(),
            ScalePolicy::Fitted { levels } | ScalePolicy::FittedPow2 { levels } => *levels,
        }
    }

    /// Fitted policy with `levels` levels, power-of-two rounded if `pow2`.
    pub fn fitted(levels: usize, pow2: bool) -> Self {
        if pow2 {
            ScalePolicy::FittedPow2 { levels }
        } else {
            ScalePolicy::Fitted { levels }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels() == 0 {
            return Err(Error::InvalidArgument("scale policy needs at least one level".into()));
        }
        if let ScalePolicy::Given(s) = self {
            validate_scales(s)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_scales(scales: &[f64]) -> Result<()> {
    match scales.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "scale {i} is {} but scales must be positive and finite",
            scales[i]
        ))),
        None => Ok(()),
    }
}

/// `N` sign planes plus their scales, approximating a real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MlbTensor {
    shape: Vec<usize>,
    levels: Vec<BinaryPlane>,
    scales: Vec<f64>,
}

impl MlbTensor {
    pub fn new(shape: Vec<usize>, levels: Vec<BinaryPlane>, scales: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.len() != scales.len() {
            return Err(Error::dims("mlb tensor levels", levels.len(), scales.len()));
        }
        validate_scales(&scales)?;
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::InvalidArgument("mlb tensor must be non-empty".into()));
        }
        if let Some(p) = levels.iter().find(|p| p.nbits() != numel) {
            return Err(Error::dims("mlb tensor plane", p.nbits(), numel));
        }
        Ok(MlbTensor { shape, levels, scales })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[BinaryPlane] {
        &self.levels
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Same planes with replacement scales.
    pub fn with_scales(&self, scales: Vec<f64>) -> Result<Self> {
        Self::new(self.shape.clone(), self.levels.clone(), scales)
    }

    /// `out[j] = Σ_i α_i (2 bit_i[j] - 1)`.
    pub fn reconstruct(&self) -> RealVector {
        RealVector::new(self.reconstruct_vec()).expect("finite scales give a finite reconstruction")
    }

    pub(crate) fn reconstruct_vec(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.numel()];
        for (plane, alpha) in self.levels.iter().zip(&self.scales) {
            for (j, o) in out.iter_mut().enumerate() {
                *o += alpha * plane.sign(j);
            }
        }
        out
    }
}

/// One sign plane: bit `j` is set iff `x[j] >= 0`.
pub fn naive_binarize(x: &[f64]) -> Result<BinaryPlane> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot binarize an empty vector".into()));
    }
    Ok(BinaryPlane::from_bools(x.iter().map(|v| *v >= 0.0)))
}

/// Least-squares scale for `r ≈ α sign(r)`: `mean(|r|)`, or [`SCALE_FLOOR`]
/// when `r` is all zeros.
pub fn fit_scale(r: &[f64]) -> f64 {
    assert!(!r.is_empty(), "fit_scale needs a non-empty residual");
    let mean = r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64;
    if mean > 0.0 {
        mean
    } else {
        SCALE_FLOOR
    }
}

/// Nearest power of two in log scale. A log-scale midpoint rounds down; the
/// exponent is clamped to `[-30, 30]`.
pub fn round_pow2(alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "power-of-two rounding needs a positive scale, got {alpha}"
        )));
    }
    let l = alpha.log2();
    let floor = l.floor();
    let k = if l - floor > 0.5 { floor + 1.0 } else { floor };
    let k = (k as i32).clamp(POW2_MIN_EXP, POW2_MAX_EXP);
    Ok(2f64.powi(k))
}

pub fn is_pow2(v: f64) -> bool {
    v.is_finite() && v > 0.0 && v.is_normal() && v.to_bits() & ((1u64 << 52) - 1) == 0
}

/// Multi-level binarization of a vector.
pub fn mlb_quantize(x: &[f64], policy: &ScalePolicy) -> Result<MlbTensor> {
    mlb_quantize_shaped(x, vec![x.len()], policy)
}

/// Multi-level binarization of a flattened tensor with per-tensor scales.
pub fn mlb_quantize_shaped(x: &[f64], shape: Vec<usize>, policy: &ScalePolicy) -> Result<MlbTensor> {
    policy.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot quantize an empty tensor".into()));
    }
    if shape.iter().product::<usize>() != x.len() {
        return Err(Error::dims("mlb shape", format!("{shape:?}"), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("cannot quantize non-finite values".into()));
    }
    let n = policy.levels();
    let mut r = x.to_vec();
    let mut levels = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        let plane = BinaryPlane::from_bools(r.iter().map(|v| *v >= 0.0));
        let alpha = match policy {
            ScalePolicy::Given(s) => s[i],
            ScalePolicy::Fitted { .. } => fit_scale(&r),
            ScalePolicy::FittedPow2 { .. } => round_pow2(fit_scale(&r))?,
        };
        for v in r.iter_mut() {
            if *v >= 0.0 {
                *v -= alpha;
            } else {
                *v += alpha;
            }
        }
        levels.push(plane);
        scales.push(alpha);
    }
    MlbTensor::new(shape, levels, scales)
}

pub fn mlb_reconstruct(t: &MlbTensor) -> RealVector {
    t.reconstruct()
}
