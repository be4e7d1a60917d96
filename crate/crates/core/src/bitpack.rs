//! Packed sign planes and xnor-popcount arithmetic.
//!
//! A [`BinaryPlane`] stores a `{-1, +1}` vector as bits (`+1 -> 1`,
//! `-1 -> 0`), little-endian within `u64` words. Bits above `nbits` in the
//! last word are always zero.
//!
//! For two planes of length `N`, `p = popcount(xnor(a, b))` counts agreeing
//! positions, and the `±1` dot product is `2p - N`. Multi-level operands
//! (stacks of planes with per-level scales `α_i`, `β_j`) combine as
//! `Σ_ij γ_ij (2 p_ij - N)` with `γ_ij = α_i β_j`.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mlb::{self, MlbTensor, ScalePolicy};
use crate::numeric::{RealMatrix, RealVector};

const WORD_BITS: usize = 64;

pub(crate) fn words_for(nbits: usize) -> usize {
    nbits.div_ceil(WORD_BITS)
}

/// Mask of valid bits in the last word of an `nbits`-long plane.
fn tail_mask(nbits: usize) -> u64 {
    match nbits % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryPlane {
    nbits: usize,
    words: Vec<u64>,
}

impl BinaryPlane {
    /// All bits zero, i.e. the all `-1` vector.
    pub fn zeros(nbits: usize) -> Self {
        BinaryPlane {
            nbits,
            words: vec![0; words_for(nbits)],
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut nbits = 0;
        for b in bits {
            if nbits % WORD_BITS == 0 {
                words.push(0);
            }
            if b {
                *words.last_mut().unwrap() |= 1 << (nbits % WORD_BITS);
            }
            nbits += 1;
        }
        BinaryPlane { nbits, words }
    }

    /// Packs a vector whose entries are exactly `+1.0` or `-1.0`.
    pub fn pack_signs(signs: &[f64]) -> Result<Self> {
        if let Some(j) = signs.iter().position(|s| *s != 1.0 && *s != -1.0) {
            return Err(Error::InvalidArgument(format!(
                "element {j} is {} but sign vectors must be exactly ±1",
                signs[j]
            )));
        }
        Ok(Self::from_bools(signs.iter().map(|s| *s == 1.0)))
    }

    /// Rebuilds a plane from serialized words, rejecting set padding bits.
    pub fn from_words(nbits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(nbits) {
            return Err(Error::dims("plane words", words.len(), words_for(nbits)));
        }
        if let Some(last) = words.last() {
            if last & !tail_mask(nbits) != 0 {
                return Err(Error::InvalidArgument("plane has set padding bits".into()));
            }
        }
        Ok(BinaryPlane { nbits, words })
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.nbits, "bit {j} out of range for {}-bit plane", self.nbits);
        (self.words[j / WORD_BITS] >> (j % WORD_BITS)) & 1 == 1
    }

    /// `+1.0` or `-1.0` for bit `j`.
    pub fn sign(&self, j: usize) -> f64 {
        if self.get(j) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.nbits).map(|j| self.sign(j)).collect()
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Bitwise negation of the logical bits; padding stays zero.
    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(self.nbits);
        }
        BinaryPlane {
            nbits: self.nbits,
            words,
        }
    }

    /// Copies bits `start..start + len` into a fresh plane.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.nbits);
        BinaryPlane::from_bools((start..start + len).map(|j| self.get(j)))
    }
}

/// Exact `±1` dot product of two planes: `2 * popcount(xnor(a, b)) - N`.
pub fn xnor_popcount_dot(a: &BinaryPlane, b: &BinaryPlane) -> Result<i64> {
    if a.nbits != b.nbits {
        return Err(Error::dims("xnor_popcount_dot", a.nbits, b.nbits));
    }
    Ok(xnor_dot_unchecked(a, b))
}

#[inline]
fn xnor_popcount(a: &BinaryPlane, b: &BinaryPlane) -> u64 {
    let n = a.words.len();
    if n == 0 {
        return 0;
    }
    let mut p: u64 = a.words[..n - 1]
        .iter()
        .zip(&b.words[..n - 1])
        .map(|(x, y)| u64::from((!(x ^ y)).count_ones()))
        .sum();
    p += u64::from((!(a.words[n - 1] ^ b.words[n - 1]) & tail_mask(a.nbits)).count_ones());
    p
}

#[inline]
fn xnor_dot_unchecked(a: &BinaryPlane, b: &BinaryPlane) -> i64 {
    2 * xnor_popcount(a, b) as i64 - a.nbits as i64
}

/// Precomputed level-pair scales `γ_ij = α_i β_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    left_levels: usize,
    right_levels: usize,
    values: Vec<f64>,
}

impl GammaTable {
    pub fn from_scales(alpha: &[f64], beta: &[f64]) -> Self {
        let values = alpha.iter().flat_map(|a| beta.iter().map(move |b| a * b)).collect();
        GammaTable {
            left_levels: alpha.len(),
            right_levels: beta.len(),
            values,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.right_levels + j]
    }

    pub fn levels(&self) -> (usize, usize) {
        (self.left_levels, self.right_levels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `Σ_ij γ_ij (2 p_ij - N)` over every level pair.
///
/// Each pair's popcount is an exact integer; it is converted to `f64` once,
/// when it is weighted by `γ_ij`.
fn multilevel_dot(left: &[BinaryPlane], right: &[BinaryPlane], gamma: &GammaTable) -> f64 {
    debug_assert_eq!(gamma.levels(), (left.len(), right.len()));
    let mut acc = 0.0;
    for (i, l) in left.iter().enumerate() {
        for (j, r) in right.iter().enumerate() {
            acc += gamma.get(i, j) * xnor_dot_unchecked(l, r) as f64;
        }
    }
    acc
}

fn check_gamma(gamma: &GammaTable, left: usize, right: usize) -> Result<()> {
    if gamma.levels() != (left, right) {
        return Err(Error::dims(
            "gamma table",
            format!("{:?}", gamma.levels()),
            format!("operand levels {:?}", (left, right)),
        ));
    }
    Ok(())
}

/// Dot product of two multi-level tensors, from their planes and scales.
pub fn mlb_dot(xq: &MlbTensor, wq: &MlbTensor) -> Result<f64> {
    mlb_dot_gamma(xq, wq, &GammaTable::from_scales(xq.scales(), wq.scales()))
}

pub fn mlb_dot_gamma(xq: &MlbTensor, wq: &MlbTensor, gamma: &GammaTable) -> Result<f64> {
    if xq.numel() != wq.numel() {
        return Err(Error::dims("mlb_dot", xq.numel(), wq.numel()));
    }
    check_gamma(gamma, xq.num_levels(), wq.num_levels())?;
    Ok(multilevel_dot(xq.levels(), wq.levels(), gamma))
}

/// Element-wise product of two multi-level vectors.
///
/// `out[j] = Σ_ik γ_ik · xnor(l_i[j], m_k[j])` with the xnor bit read as ±1.
pub fn mlb_pointwise_mul(aq: &MlbTensor, bq: &MlbTensor) -> Result<RealVector> {
    if aq.numel() != bq.numel() {
        return Err(Error::dims("mlb_pointwise_mul", aq.numel(), bq.numel()));
    }
    let n = aq.numel();
    let mut out = vec![0.0; n];
    for (i, la) in aq.levels().iter().enumerate() {
        for (k, lb) in bq.levels().iter().enumerate() {
            let gamma = aq.scales()[i] * bq.scales()[k];
            for (w, (x, y)) in la.words.iter().zip(&lb.words).enumerate() {
                let agree = !(x ^ y);
                let base = w * WORD_BITS;
                let end = (base + WORD_BITS).min(n);
                for (bit, o) in out[base..end].iter_mut().enumerate() {
                    if (agree >> bit) & 1 == 1 {
                        *o += gamma;
                    } else {
                        *o -= gamma;
                    }
                }
            }
        }
    }
    RealVector::from_finite(out, "mlb_pointwise_mul")
}

/// A matrix quantized per tensor: `N` shared scales and, for every row,
/// `N` planes of `cols` bits. Rows are padded to whole words independently.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    scales: Vec<f64>,
    /// Row-major: row `r`, level `i` at `r * levels + i`.
    planes: Vec<BinaryPlane>,
}

impl QuantizedMatrix {
    pub fn new(rows: usize, cols: usize, scales: Vec<f64>, row_planes: Vec<Vec<BinaryPlane>>) -> Result<Self> {
        let levels = scales.len();
        if levels == 0 {
            return Err(Error::InvalidArgument(
                "quantized matrix needs at least one level".into(),
            ));
        }
        mlb::validate_scales(&scales)?;
        if row_planes.len() != rows {
            return Err(Error::dims("quantized matrix rows", row_planes.len(), rows));
        }
        let mut planes = Vec::with_capacity(rows * levels);
        for (r, row) in row_planes.into_iter().enumerate() {
            if row.len() != levels {
                return Err(Error::dims(
                    "quantized matrix levels",
                    format!("row {r} has {}", row.len()),
                    format!("{levels} scales"),
                ));
            }
            for p in row {
                if p.nbits() != cols {
                    return Err(Error::dims("quantized matrix row bits", p.nbits(), cols));
                }
                planes.push(p);
            }
        }
        Ok(QuantizedMatrix {
            rows,
            cols,
            scales,
            planes,
        })
    }

    /// Runs multi-level binarization over the whole matrix (one scale per
    /// level for the tensor) and splits each level into row planes.
    pub fn quantize(m: &RealMatrix, policy: &ScalePolicy) -> Result<Self> {
        let t = mlb::mlb_quantize_shaped(m.data(), vec![m.rows(), m.cols()], policy)?;
        Self::from_mlb(&t, m.rows(), m.cols())
    }

    pub fn from_mlb(t: &MlbTensor, rows: usize, cols: usize) -> Result<Self> {
        if t.numel() != rows * cols {
            return Err(Error::dims("quantized matrix", t.numel(), rows * cols));
        }
        let row_planes = (0..rows)
            .map(|r| t.levels().iter().map(|l| l.slice(r * cols, cols)).collect())
            .collect();
        Self::new(rows, cols, t.scales().to_vec(), row_planes)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_levels(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn row_planes(&self, r: usize) -> &[BinaryPlane] {
        let n = self.num_levels();
        &self.planes[r * n..(r + 1) * n]
    }

    pub fn reconstruct(&self) -> RealMatrix {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            let planes = self.row_planes(r);
            for c in 0..self.cols {
                data.push(planes.iter().zip(&self.scales).map(|(p, a)| a * p.sign(c)).sum());
            }
        }
        RealMatrix::new(self.rows, self.cols, data).expect("reconstruction keeps shape")
    }
}

/// `out[r] = mlb_dot(row r of wq, xq)`, rows scheduled per [`Execution::default`].
pub fn mlb_matvec(wq: &QuantizedMatrix, xq: &MlbTensor) -> Result<RealVector> {
    let gamma = GammaTable::from_scales(wq.scales(), xq.scales());
    mlb_matvec_with(wq, xq, &gamma, Execution::default())
}

/// Matrix-vector product with a precomputed `γ` (weight levels x input levels).
pub fn mlb_matvec_with(
    wq: &QuantizedMatrix,
    xq: &MlbTensor,
    gamma: &GammaTable,
    exec: Execution,
) -> Result<RealVector> {
    if wq.cols() != xq.numel() {
        return Err(Error::dims(
            "mlb_matvec",
            format!("matrix {}x{}", wq.rows(), wq.cols()),
            format!("vector of length {}", xq.numel()),
        ));
    }
    check_gamma(gamma, wq.num_levels(), xq.num_levels())?;
    // Rows are tiny; only fan out when there is enough work per call.
    let work = wq.rows() * wq.num_levels() * xq.num_levels() * words_for(wq.cols());
    let exec = if work < 4096 { Execution::Sequential } else { exec };
    let out = exec.map_range(wq.rows(), |r| multilevel_dot(wq.row_planes(r), xq.levels(), gamma));
    RealVector::from_finite(out, "mlb_matvec")
}
