//! Binary model file.
//!
//! All integers and floats are little-endian; floats are raw IEEE-754
//! doubles.
//!
//! ```text
//! magic        b"MUBN"
//! version      u32 = 1
//! input_size   u32
//! hidden_size  u32
//! num_classes  u32
//! mode         u8   0 = fp, 1 = b_lstm, 2 = mubinn1, 3 = mubinn2
//! act_levels   u8   0 for fp
//! weight_lvls  u8   0 for fp
//! records      wx_f wh_f b_f  wx_i wh_i b_i  wx_g wh_g b_g  wx_o wh_o b_o
//!              dense_w dense_b
//! ```
//!
//! Each record:
//!
//! ```text
//! name    u16 length + UTF-8 bytes
//! dtype   u8   0 = real64, 1 = mlb
//! dims    u8 rank, then u32 per dim
//! payload real64: one f64 per element, row-major
//!         mlb:    u8 level count N, then per level an f64 scale followed
//!                 by packed u64 words; matrices pack every row separately
//!                 into ceil(cols / 64) words, vectors into ceil(len / 64)
//! ```
//!
//! Record dtypes by mode: `fp` stores everything as real64. Quantized modes
//! store `wx_*` as mlb; `wh_*` as mlb, or real64 when a mubinn1 model keeps
//! the recurrent product exact; `b_*` as real64, or mlb for stored-plane
//! biases; the dense head is always real64.

use std::path::Path;

use thiserror::Error;

use crate::bitpack::{words_for, BinaryPlane, QuantizedMatrix};
use crate::error::{Error, Result};
use crate::lstm::{DenseHead, Gate, GateParams, LstmModel, LstmWeights};
use crate::mlb::MlbTensor;
use crate::numeric::{RealMatrix, RealVector};
use crate::qlstm::{BiasPolicy, QuantConfig, QuantGate, QuantMode, QuantizedModel, RecurrentWeights, StoredBias};

pub const MAGIC: &[u8; 4] = b"MUBN";
pub const VERSION: u32 = 1;

const DTYPE_REAL: u8 = 0;
const DTYPE_MLB: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic {found:?} at offset 0 (expected \"MUBN\")")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u32 },
    #[error("truncated at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("unknown mode tag {tag} at offset {offset}")]
    BadMode { offset: usize, tag: u8 },
    #[error("missing tensor {expected:?} at offset {offset} (found {found:?})")]
    MissingTensor {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("tensor {tensor:?} at offset {offset}: dtype {dtype} not allowed here")]
    BadDtype { offset: usize, tensor: String, dtype: u8 },
    #[error("tensor {tensor:?} at offset {offset}: shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        offset: usize,
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid value at offset {offset}: {msg}")]
    InvalidValue { offset: usize, msg: String },
    #[error("{count} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

/// A model as stored on disk: full precision or quantized.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    FullPrecision(LstmModel),
    Quantized(QuantizedModel),
}

impl Model {
    pub fn input_size(&self) -> usize {
        match self {
            Model::FullPrecision(m) => m.weights.input_size(),
            Model::Quantized(q) => q.input_size(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            Model::FullPrecision(m) => m.weights.hidden_size(),
            Model::Quantized(q) => q.hidden_size(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::FullPrecision(m) => m.head.num_classes(),
            Model::Quantized(q) => q.num_classes(),
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            Model::FullPrecision(_) => "fp",
            Model::Quantized(q) => q.config().mode.name(),
        }
    }

    pub fn predict(&self, seq: &[RealVector]) -> Result<(RealVector, usize)> {
        match self {
            Model::FullPrecision(m) => m.predict(seq),
            Model::Quantized(q) => q.predict(seq),
        }
    }
}

fn mode_tag(m: &Model) -> u8 {
    match m {
        Model::FullPrecision(_) => 0,
        Model::Quantized(q) => match q.config().mode {
            QuantMode::BLstm => 1,
            QuantMode::Mubinn1 => 2,
            QuantMode::Mubinn2 => 3,
        },
    }
}

/// Names of the records, in file order.
pub fn tensor_names() -> Vec<String> {
    let mut names = Vec::with_capacity(14);
    for g in Gate::ALL {
        let t = g.tag();
        names.push(format!("wx_{t}"));
        names.push(format!("wh_{t}"));
        names.push(format!("b_{t}"));
    }
    names.push("dense_w".into());
    names.push("dense_b".into());
    names
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn header(&mut self, name: &str, dtype: u8, dims: &[usize]) {
        self.u16(name.len() as u16);
        self.buf.extend_from_slice(name.as_bytes());
        self.u8(dtype);
        self.u8(dims.len() as u8);
        for d in dims {
            self.u32(*d);
        }
    }

    fn real_matrix(&mut self, name: &str, m: &RealMatrix) {
        self.header(name, DTYPE_REAL, &[m.rows(), m.cols()]);
        m.data().iter().for_each(|v| self.f64(*v));
    }

    fn real_vector(&mut self, name: &str, v: &[f64]) {
        self.header(name, DTYPE_REAL, &[v.len()]);
        v.iter().for_each(|x| self.f64(*x));
    }

    fn mlb_matrix(&mut self, name: &str, q: &QuantizedMatrix) {
        self.header(name, DTYPE_MLB, &[q.rows(), q.cols()]);
        self.u8(q.num_levels() as u8);
        for (level, scale) in q.scales().iter().enumerate() {
            self.f64(*scale);
            for r in 0..q.rows() {
                for w in q.row_planes(r)[level].words() {
                    self.buf.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
    }

    fn mlb_vector(&mut self, name: &str, t: &MlbTensor) {
        self.header(name, DTYPE_MLB, &[t.numel()]);
        self.u8(t.num_levels() as u8);
        for (plane, scale) in t.levels().iter().zip(t.scales()) {
            self.f64(*scale);
            for w in plane.words() {
                self.buf.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&VERSION.to_le_bytes());
    w.u32(model.input_size());
    w.u32(model.hidden_size());
    w.u32(model.num_classes());
    w.u8(mode_tag(model));
    let head = match model {
        Model::FullPrecision(m) => {
            w.u8(0);
            w.u8(0);
            for g in Gate::ALL {
                let p = m.weights.gate(g);
                let t = g.tag();
                w.real_matrix(&format!("wx_{t}"), &p.wx);
                w.real_matrix(&format!("wh_{t}"), &p.wh);
                w.real_vector(&format!("b_{t}"), &p.bias);
            }
            &m.head
        }
        Model::Quantized(q) => {
            w.u8(q.config().act_levels as u8);
            w.u8(q.config().weight_levels as u8);
            for g in Gate::ALL {
                let qg = q.gate(g);
                let t = g.tag();
                w.mlb_matrix(&format!("wx_{t}"), qg.wx());
                match qg.wh() {
                    RecurrentWeights::Binarized(m) => w.mlb_matrix(&format!("wh_{t}"), m),
                    RecurrentWeights::Full(m) => w.real_matrix(&format!("wh_{t}"), m),
                }
                match qg.bias() {
                    StoredBias::Full(v) => w.real_vector(&format!("b_{t}"), v),
                    StoredBias::Mlb(m) => w.mlb_vector(&format!("b_{t}"), m),
                }
            }
            q.head()
        }
    };
    w.real_matrix("dense_w", head.weights());
    w.real_vector("dense_b", head.bias());
    w.buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

/// A record's payload, decoded.
enum Payload {
    Real(Vec<f64>),
    /// Scales and, per level, the raw words.
    Mlb(Vec<f64>, Vec<Vec<u64>>),
}

struct Record {
    offset: usize,
    name: String,
    dims: Vec<usize>,
    payload: Payload,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn record(&mut self, expected: &str) -> Result<Record, FormatError> {
        let offset = self.pos;
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        let name = String::from_utf8_lossy(raw).into_owned();
        if name != expected {
            return Err(FormatError::MissingTensor {
                offset,
                expected: expected.into(),
                found: name,
            });
        }
        let dtype_at = self.pos;
        let dtype = self.u8()?;
        let rank = self.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        if !(1..=2).contains(&rank) || dims.contains(&0) {
            return Err(FormatError::InvalidValue {
                offset: dtype_at,
                msg: format!("tensor {name:?} has unsupported dims {dims:?}"),
            });
        }
        let numel: usize = dims.iter().product();
        let payload = match dtype {
            DTYPE_REAL => {
                let bytes = numel.checked_mul(8).ok_or_else(|| FormatError::InvalidValue {
                    offset: dtype_at,
                    msg: "tensor too large".into(),
                })?;
                let at = self.pos;
                let raw = self.take(bytes)?;
                let vals: Vec<f64> = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(FormatError::InvalidValue {
                        offset: at,
                        msg: format!("tensor {name:?} has non-finite values"),
                    });
                }
                Payload::Real(vals)
            }
            DTYPE_MLB => {
                let levels = self.u8()? as usize;
                let words_per_level = match dims.as_slice() {
                    [rows, cols] => rows * words_for(*cols),
                    [len] => words_for(*len),
                    _ => unreachable!(),
                };
                let mut scales = Vec::with_capacity(levels);
                let mut words = Vec::with_capacity(levels);
                for _ in 0..levels {
                    let at = self.pos;
                    let s = self.f64()?;
                    if !(s.is_finite() && s > 0.0) {
                        return Err(FormatError::InvalidValue {
                            offset: at,
                            msg: format!("tensor {name:?} has scale {s}"),
                        });
                    }
                    scales.push(s);
                    // Check the full level is present before allocating.
                    let need = words_per_level * 8;
                    if need > self.buf.len() - self.pos {
                        return Err(FormatError::Truncated {
                            offset: self.pos,
                            needed: need,
                            available: self.buf.len() - self.pos,
                        });
                    }
                    let mut lw = Vec::with_capacity(words_per_level);
                    for _ in 0..words_per_level {
                        lw.push(self.u64()?);
                    }
                    words.push(lw);
                }
                Payload::Mlb(scales, words)
            }
            other => {
                return Err(FormatError::BadDtype {
                    offset: dtype_at,
                    tensor: name,
                    dtype: other,
                })
            }
        };
        Ok(Record {
            offset,
            name,
            dims,
            payload,
        })
    }
}

fn invalid(offset: usize, e: impl ToString) -> FormatError {
    FormatError::InvalidValue {
        offset,
        msg: e.to_string(),
    }
}

impl Record {
    fn expect_dims(&self, want: &[usize]) -> Result<(), FormatError> {
        if self.dims != want {
            return Err(FormatError::ShapeMismatch {
                offset: self.offset,
                tensor: self.name.clone(),
                expected: want.to_vec(),
                found: self.dims.clone(),
            });
        }
        Ok(())
    }

    fn bad_dtype(&self) -> FormatError {
        let dtype = match self.payload {
            Payload::Real(_) => DTYPE_REAL,
            Payload::Mlb(..) => DTYPE_MLB,
        };
        FormatError::BadDtype {
            offset: self.offset,
            tensor: self.name.clone(),
            dtype,
        }
    }

    fn real_matrix(self, rows: usize, cols: usize) -> Result<RealMatrix, FormatError> {
        self.expect_dims(&[rows, cols])?;
        match self.payload {
            Payload::Real(v) => RealMatrix::new(rows, cols, v).map_err(|e| invalid(self.offset, e)),
            _ => Err(self.bad_dtype()),
        }
    }

    fn real_vector(self, len: usize) -> Result<RealVector, FormatError> {
        self.expect_dims(&[len])?;
        match self.payload {
            Payload::Real(v) => RealVector::new(v).map_err(|e| invalid(self.offset, e)),
            _ => Err(self.bad_dtype()),
        }
    }

    fn mlb_matrix(self, rows: usize, cols: usize, levels: usize) -> Result<QuantizedMatrix, FormatError> {
        self.expect_dims(&[rows, cols])?;
        let Payload::Mlb(scales, words) = self.payload else {
            return Err(self.bad_dtype());
        };
        check_levels(self.offset, &self.name, scales.len(), levels)?;
        let wpr = words_for(cols);
        let mut row_planes: Vec<Vec<BinaryPlane>> = vec![Vec::with_capacity(levels); rows];
        for lw in &words {
            for (r, planes) in row_planes.iter_mut().enumerate() {
                let plane = BinaryPlane::from_words(cols, lw[r * wpr..(r + 1) * wpr].to_vec())
                    .map_err(|e| invalid(self.offset, format!("{}: row {r}: {e}", self.name)))?;
                planes.push(plane);
            }
        }
        QuantizedMatrix::new(rows, cols, scales, row_planes).map_err(|e| invalid(self.offset, e))
    }

    fn mlb_vector(self, len: usize, levels: usize) -> Result<MlbTensor, FormatError> {
        self.expect_dims(&[len])?;
        let Payload::Mlb(scales, words) = self.payload else {
            return Err(self.bad_dtype());
        };
        check_levels(self.offset, &self.name, scales.len(), levels)?;
        let planes = words
            .into_iter()
            .map(|w| BinaryPlane::from_words(len, w))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| invalid(self.offset, format!("{}: {e}", self.name)))?;
        MlbTensor::new(vec![len], planes, scales).map_err(|e| invalid(self.offset, e))
    }
}

fn check_levels(offset: usize, name: &str, found: usize, want: usize) -> Result<(), FormatError> {
    if found != want {
        return Err(FormatError::InvalidValue {
            offset,
            msg: format!("tensor {name:?} has {found} levels, header says {want}"),
        });
    }
    Ok(())
}

pub fn decode_model(bytes: &[u8]) -> Result<Model, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| FormatError::BadMagic {
        found: bytes[..bytes.len().min(4)].to_vec(),
    })?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { offset: 4, version });
    }
    let dims_at = r.pos;
    let input = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let classes = r.u32()? as usize;
    if input == 0 || hidden == 0 || classes == 0 {
        return Err(invalid(
            dims_at,
            format!("zero dimension in header ({input}, {hidden}, {classes})"),
        ));
    }
    let mode_at = r.pos;
    let tag = r.u8()?;
    let act_levels = r.u8()? as usize;
    let weight_levels = r.u8()? as usize;

    let names = tensor_names();
    let mut names = names.iter();
    let mut next = |r: &mut Reader| r.record(names.next().expect("fixed record list"));

    let model = if tag == 0 {
        if act_levels != 0 || weight_levels != 0 {
            return Err(invalid(mode_at + 1, "fp models must declare zero levels"));
        }
        let mut gates = Vec::with_capacity(4);
        for _ in Gate::ALL {
            let wx = next(&mut r)?.real_matrix(hidden, input)?;
            let wh = next(&mut r)?.real_matrix(hidden, hidden)?;
            let bias = next(&mut r)?.real_vector(hidden)?;
            gates.push(GateParams { wx, wh, bias });
        }
        let weights = LstmWeights::new(gates.try_into().expect("four gates")).map_err(|e| invalid(dims_at, e))?;
        let head = read_head(&mut r, &mut next, classes, hidden)?;
        Model::FullPrecision(LstmModel::new(weights, head).map_err(|e| invalid(dims_at, e))?)
    } else {
        let mode = match tag {
            1 => QuantMode::BLstm,
            2 => QuantMode::Mubinn1,
            3 => QuantMode::Mubinn2,
            _ => return Err(FormatError::BadMode { offset: mode_at, tag }),
        };
        // Scale-fitting flags only matter when quantizing; a loaded model
        // carries its scales, so the mode defaults are kept.
        let mut cfg = QuantConfig::for_mode(mode, act_levels, weight_levels);
        cfg.validate().map_err(|e| invalid(mode_at, e))?;
        let mut gates = Vec::with_capacity(4);
        let mut recurrent_kind = None;
        let mut bias_kind = None;
        for _ in Gate::ALL {
            let wx = next(&mut r)?.mlb_matrix(hidden, input, weight_levels)?;
            let rec = next(&mut r)?;
            let rec_offset = rec.offset;
            let wh = match rec.payload {
                Payload::Mlb(..) => RecurrentWeights::Binarized(rec.mlb_matrix(hidden, hidden, weight_levels)?),
                Payload::Real(_) if mode == QuantMode::Mubinn1 => {
                    RecurrentWeights::Full(rec.real_matrix(hidden, hidden)?)
                }
                Payload::Real(_) => return Err(rec.bad_dtype()),
            };
            let binarized = matches!(wh, RecurrentWeights::Binarized(_));
            if *recurrent_kind.get_or_insert(binarized) != binarized {
                return Err(invalid(
                    rec_offset,
                    "recurrent weights mix binarized and full precision",
                ));
            }
            let b = next(&mut r)?;
            let b_offset = b.offset;
            let bias = match b.payload {
                Payload::Real(_) => StoredBias::Full(b.real_vector(hidden)?),
                Payload::Mlb(..) => StoredBias::Mlb(b.mlb_vector(hidden, weight_levels)?),
            };
            let stored = matches!(bias, StoredBias::Mlb(_));
            if *bias_kind.get_or_insert(stored) != stored {
                return Err(invalid(b_offset, "biases mix stored planes and full precision"));
            }
            gates.push(QuantGate::new(wx, wh, bias));
        }
        cfg.binarize_recurrent = recurrent_kind.unwrap_or(true);
        cfg.bias_policy = if bias_kind == Some(true) {
            BiasPolicy::MlbStored
        } else {
            BiasPolicy::FullPrecision
        };
        let head = read_head(&mut r, &mut next, classes, hidden)?;
        let gates: [QuantGate; 4] = gates.try_into().expect("four gates");
        Model::Quantized(QuantizedModel::from_parts(cfg, gates, head).map_err(|e| invalid(mode_at, e))?)
    };
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            offset: r.pos,
            count: bytes.len() - r.pos,
        });
    }
    Ok(model)
}

fn read_head(
    r: &mut Reader,
    next: &mut impl FnMut(&mut Reader) -> Result<Record, FormatError>,
    classes: usize,
    hidden: usize,
) -> Result<DenseHead, FormatError> {
    let rec = next(r)?;
    let at = rec.offset;
    let w = rec.real_matrix(classes, hidden)?;
    let b = next(r)?.real_vector(classes)?;
    DenseHead::new(w, b).map_err(|e| invalid(at, e))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    super::write_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_model(&bytes)?)
}

/// Exact size in bytes of the file for a model of the given shape.
///
/// `levels` is `None` for full precision, otherwise the weight level count
/// with binarized recurrent weights and full-precision biases.
pub fn model_file_size(input: usize, hidden: usize, classes: usize, levels: Option<usize>) -> usize {
    let header = 4 + 4 + 12 + 3;
    let rec_head = |name: &str, rank: usize| 2 + name.len() + 1 + 1 + 4 * rank;
    let real = |n: usize| 8 * n;
    let mlb = |rows: usize, cols: usize, n: usize| 1 + n * (8 + 8 * rows * words_for(cols));
    let mut total = header;
    for g in Gate::ALL {
        let t = g.tag();
        let (wx, wh) = match levels {
            None => (real(hidden * input), real(hidden * hidden)),
            Some(n) => (mlb(hidden, input, n), mlb(hidden, hidden, n)),
        };
        total += rec_head(&format!("wx_{t}"), 2) + wx;
        total += rec_head(&format!("wh_{t}"), 2) + wh;
        total += rec_head(&format!("b_{t}"), 1) + real(hidden);
    }
    total += rec_head("dense_w", 2) + real(classes * hidden);
    total += rec_head("dense_b", 1) + real(classes);
    total
}
