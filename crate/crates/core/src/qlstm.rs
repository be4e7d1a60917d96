//! Quantized LSTM cell in three modes.
//!
//! - [`QuantMode::BLstm`]: inputs, hidden state and weights reduced to one
//!   sign plane with unit scale. Gate matmuls are plain xnor-popcount
//!   integers; biases, activations and the state update stay exact.
//! - [`QuantMode::Mubinn1`]: gate matmuls use `A`-level activations and
//!   `W`-level weights with power-of-two scales. The recurrent product is
//!   binarized unless `binarize_recurrent` is off, in which case `Wh h` is
//!   computed in full precision. Everything after the matmuls is exact.
//! - [`QuantMode::Mubinn2`]: the whole cell datapath. On top of the
//!   multi-level matmuls, activations come from piecewise-linear tables, the
//!   gate outputs `f, i, g, o` and `c_{t-1}` are multi-level binarized at `A`
//!   levels, and `c_t = f̂ ⊙ ĉ_{t-1} + î ⊙ ĝ` runs on the xnor pointwise
//!   kernel. `h_t = ô ⊙ tanh_lut(c_t)` is a full-precision product.
//!
//! Quantization points within a step: `x_t` and `h_{t-1}` are binarized on
//! entry; `c_{t-1}` only for the pointwise product. `h_t` and `c_t` are kept
//! in full precision between steps.
//!
//! Weight scales are fixed at quantization time. Activation scales are
//! refitted on every step (`mean |r|` per level, power-of-two rounded in
//! MuBiNN1, unit in B-LSTM), so the pair scales `γ_ij = α_i β_j` are formed
//! once per product from the stored weight scales and the step's activation
//! scales.

use crate::bitpack::{mlb_matvec_with, mlb_pointwise_mul, GammaTable, QuantizedMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lstm::{sigmoid, DenseHead, Gate, LstmModel, LstmWeights};
use crate::lut::{ActivationKind, PwlTable};
use crate::mlb::{mlb_quantize, MlbTensor, ScalePolicy};
use crate::numeric::{matvec, RealMatrix, RealVector};

/// Largest level count representable in the model file header.
pub const MAX_LEVELS: usize = u8::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    BLstm,
    Mubinn1,
    Mubinn2,
}

impl QuantMode {
    pub fn name(self) -> &'static str {
        match self {
            QuantMode::BLstm => "b_lstm",
            QuantMode::Mubinn1 => "mubinn1",
            QuantMode::Mubinn2 => "mubinn2",
        }
    }
}

impl std::str::FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b_lstm" => Ok(QuantMode::BLstm),
            "mubinn1" => Ok(QuantMode::Mubinn1),
            "mubinn2" => Ok(QuantMode::Mubinn2),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected b_lstm, mubinn1 or mubinn2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasPolicy {
    FullPrecision,
    /// Stored as multi-level planes, reconstructed once at load.
    MlbStored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub mode: QuantMode,
    pub act_levels: usize,
    pub weight_levels: usize,
    pub pow2_scales: bool,
    /// MuBiNN1 only: binarize the `Wh h` products as well as `Wx x`.
    pub binarize_recurrent: bool,
    pub bias_policy: BiasPolicy,
    /// Weight scales fixed at `1.0` instead of fitted.
    pub unit_scales: bool,
}

impl QuantConfig {
    pub fn b_lstm() -> Self {
        QuantConfig {
            mode: QuantMode::BLstm,
            act_levels: 1,
            weight_levels: 1,
            pow2_scales: false,
            binarize_recurrent: true,
            bias_policy: BiasPolicy::FullPrecision,
            unit_scales: true,
        }
    }

    pub fn mubinn1(act_levels: usize, weight_levels: usize) -> Self {
        QuantConfig {
            mode: QuantMode::Mubinn1,
            act_levels,
            weight_levels,
            pow2_scales: true,
            binarize_recurrent: true,
            bias_policy: BiasPolicy::FullPrecision,
            unit_scales: false,
        }
    }

    pub fn mubinn2(act_levels: usize, weight_levels: usize) -> Self {
        QuantConfig {
            mode: QuantMode::Mubinn2,
            act_levels,
            weight_levels,
            pow2_scales: false,
            binarize_recurrent: true,
            bias_policy: BiasPolicy::FullPrecision,
            unit_scales: false,
        }
    }

    pub fn for_mode(mode: QuantMode, act_levels: usize, weight_levels: usize) -> Self {
        match mode {
            QuantMode::BLstm => QuantConfig {
                act_levels,
                weight_levels,
                ..Self::b_lstm()
            },
            QuantMode::Mubinn1 => Self::mubinn1(act_levels, weight_levels),
            QuantMode::Mubinn2 => Self::mubinn2(act_levels, weight_levels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, n) in [("activation", self.act_levels), ("weight", self.weight_levels)] {
            if n == 0 || n > MAX_LEVELS {
                return bad(format!("{name} levels must be in 1..={MAX_LEVELS}, got {n}"));
            }
        }
        match self.mode {
            QuantMode::BLstm => {
                if self.act_levels != 1 || self.weight_levels != 1 {
                    return bad(format!(
                        "b_lstm is single-level by definition, got A={} W={}",
                        self.act_levels, self.weight_levels
                    ));
                }
                if !self.unit_scales {
                    return bad("b_lstm uses unit scales".into());
                }
            }
            QuantMode::Mubinn1 => {
                if !self.pow2_scales {
                    return bad("mubinn1 requires power-of-two scales".into());
                }
            }
            QuantMode::Mubinn2 => {}
        }
        if !self.binarize_recurrent && self.mode != QuantMode::Mubinn1 {
            return bad(format!(
                "full-precision recurrent weights are a mubinn1 option, not {}",
                self.mode.name()
            ));
        }
        Ok(())
    }

    fn weight_policy(&self) -> ScalePolicy {
        if self.unit_scales {
            ScalePolicy::Given(vec![1.0; self.weight_levels])
        } else {
            ScalePolicy::fitted(self.weight_levels, self.pow2_scales)
        }
    }
}

/// Recurrent weights: binarized, or kept exact (MuBiNN1 option).
#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentWeights {
    Binarized(QuantizedMatrix),
    Full(RealMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredBias {
    Full(RealVector),
    Mlb(MlbTensor),
}

impl StoredBias {
    fn effective(&self) -> RealVector {
        match self {
            StoredBias::Full(v) => v.clone(),
            StoredBias::Mlb(t) => t.reconstruct(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantGate {
    wx: QuantizedMatrix,
    wh: RecurrentWeights,
    bias: StoredBias,
    bias_eff: RealVector,
}

impl QuantGate {
    pub fn new(wx: QuantizedMatrix, wh: RecurrentWeights, bias: StoredBias) -> Self {
        let bias_eff = bias.effective();
        QuantGate { wx, wh, bias, bias_eff }
    }

    pub fn wx(&self) -> &QuantizedMatrix {
        &self.wx
    }

    pub fn wh(&self) -> &RecurrentWeights {
        &self.wh
    }

    pub fn bias(&self) -> &StoredBias {
        &self.bias
    }

    pub fn effective_bias(&self) -> &RealVector {
        &self.bias_eff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantState {
    pub h: RealVector,
    pub c: RealVector,
    pub t: usize,
}

impl QuantState {
    pub fn zeros(hidden: usize) -> Self {
        QuantState {
            h: RealVector::zeros(hidden),
            c: RealVector::zeros(hidden),
            t: 0,
        }
    }
}

/// Intermediate values of one quantized step, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct StepTrace {
    /// Gate preactivations, indexed by [`Gate::index`].
    pub preactivations: [Vec<f64>; 4],
    /// Reconstructed multi-level gate outputs `f̂, î, ĝ, ô` (MuBiNN2 only).
    pub gate_reconstructions: Option<[Vec<f64>; 4]>,
}

#[derive(Debug, Clone)]
pub struct QuantizedModel {
    config: QuantConfig,
    input_size: usize,
    hidden_size: usize,
    gates: [QuantGate; 4],
    head: DenseHead,
    sig_lut: PwlTable,
    tanh_lut: PwlTable,
}

/// Equality ignores `pow2_scales` and `unit_scales`, which only steer
/// quantization and are not stored with the model.
impl PartialEq for QuantizedModel {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (&self.config, &other.config);
        a.mode == b.mode
            && a.act_levels == b.act_levels
            && a.weight_levels == b.weight_levels
            && a.binarize_recurrent == b.binarize_recurrent
            && a.bias_policy == b.bias_policy
            && self.gates == other.gates
            && self.head == other.head
    }
}

impl QuantizedModel {
    /// Quantizes every weight matrix of `model` per `cfg`.
    pub fn quantize(model: &LstmModel, cfg: &QuantConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = &model.weights;
        let policy = cfg.weight_policy();
        let mut gates = Vec::with_capacity(4);
        for gate in Gate::ALL {
            let p = weights.gate(gate);
            let wx = QuantizedMatrix::quantize(&p.wx, &policy)?;
            let wh = if cfg.binarize_recurrent {
                RecurrentWeights::Binarized(QuantizedMatrix::quantize(&p.wh, &policy)?)
            } else {
                RecurrentWeights::Full(p.wh.clone())
            };
            let bias = match cfg.bias_policy {
                BiasPolicy::FullPrecision => StoredBias::Full(p.bias.clone()),
                BiasPolicy::MlbStored => StoredBias::Mlb(mlb_quantize(&p.bias, &policy)?),
            };
            gates.push(QuantGate::new(wx, wh, bias));
        }
        let gates: [QuantGate; 4] = gates.try_into().expect("four gates");
        Self::from_parts(cfg.clone(), gates, model.head.clone())
    }

    /// Assembles a model from stored parts, validating shapes and levels.
    pub fn from_parts(config: QuantConfig, gates: [QuantGate; 4], head: DenseHead) -> Result<Self> {
        config.validate()?;
        let hidden_size = gates[0].wx.rows();
        let input_size = gates[0].wx.cols();
        for (gate, g) in Gate::ALL.iter().zip(&gates) {
            let tag = gate.tag();
            if (g.wx.rows(), g.wx.cols()) != (hidden_size, input_size) {
                return Err(Error::dims(
                    "quantized input weights",
                    format!("{tag}: {}x{}", g.wx.rows(), g.wx.cols()),
                    format!("{hidden_size}x{input_size}"),
                ));
            }
            if g.wx.num_levels() != config.weight_levels {
                return Err(Error::dims(
                    "weight levels",
                    format!("wx_{tag}: {}", g.wx.num_levels()),
                    config.weight_levels,
                ));
            }
            match &g.wh {
                RecurrentWeights::Binarized(q) => {
                    if !config.binarize_recurrent {
                        return Err(Error::InvalidConfig(format!(
                            "wh_{tag} is binarized but the config keeps it exact"
                        )));
                    }
                    if (q.rows(), q.cols()) != (hidden_size, hidden_size) || q.num_levels() != config.weight_levels {
                        return Err(Error::dims(
                            "quantized recurrent weights",
                            format!("wh_{tag}: {}x{} with {} levels", q.rows(), q.cols(), q.num_levels()),
                            format!("{hidden_size}x{hidden_size} with {} levels", config.weight_levels),
                        ));
                    }
                }
                RecurrentWeights::Full(m) => {
                    if config.binarize_recurrent {
                        return Err(Error::InvalidConfig(format!(
                            "wh_{tag} is full precision but the config binarizes it"
                        )));
                    }
                    if m.shape() != (hidden_size, hidden_size) {
                        return Err(Error::dims(
                            "recurrent weights",
                            format!("wh_{tag}: {:?}", m.shape()),
                            hidden_size,
                        ));
                    }
                }
            }
            if g.bias_eff.len() != hidden_size {
                return Err(Error::dims(
                    "bias",
                    format!("b_{tag}: {}", g.bias_eff.len()),
                    hidden_size,
                ));
            }
        }
        if head.hidden_size() != hidden_size {
            return Err(Error::dims("dense head input", head.hidden_size(), hidden_size));
        }
        Ok(QuantizedModel {
            config,
            input_size,
            hidden_size,
            gates,
            head,
            sig_lut: PwlTable::default_for(ActivationKind::Sigmoid),
            tanh_lut: PwlTable::default_for(ActivationKind::Tanh),
        })
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn gate(&self, gate: Gate) -> &QuantGate {
        &self.gates[gate.index()]
    }

    pub fn head(&self) -> &DenseHead {
        &self.head
    }

    /// Scale policy used to binarize `x_t`, `h_{t-1}` and MuBiNN2 cell
    /// internals at run time.
    pub fn activation_policy(&self) -> ScalePolicy {
        let a = self.config.act_levels;
        match self.config.mode {
            QuantMode::BLstm => ScalePolicy::Given(vec![1.0]),
            QuantMode::Mubinn1 => ScalePolicy::FittedPow2 { levels: a },
            QuantMode::Mubinn2 => ScalePolicy::Fitted { levels: a },
        }
    }

    pub fn quantize_activation(&self, v: &[f64]) -> Result<MlbTensor> {
        mlb_quantize(v, &self.activation_policy())
    }

    /// Gate preactivations from already-binarized `x_t` (and `h_{t-1}` when
    /// the recurrent product is binarized; `h` is used otherwise).
    pub fn preactivations_from(&self, xq: &MlbTensor, h: &[f64], hq: Option<&MlbTensor>) -> Result<[Vec<f64>; 4]> {
        if xq.numel() != self.input_size {
            return Err(Error::dims("quantized input", xq.numel(), self.input_size));
        }
        if h.len() != self.hidden_size {
            return Err(Error::dims("hidden state", h.len(), self.hidden_size));
        }
        let exec = Execution::default();
        let mut out: [Vec<f64>; 4] = Default::default();
        for (slot, g) in out.iter_mut().zip(&self.gates) {
            let gx = GammaTable::from_scales(g.wx.scales(), xq.scales());
            let mut acc = mlb_matvec_with(&g.wx, xq, &gx, exec)?.into_vec();
            let rec = match &g.wh {
                RecurrentWeights::Binarized(wh) => {
                    let hq = hq.ok_or_else(|| {
                        Error::InvalidArgument("binarized recurrent product needs a quantized h".into())
                    })?;
                    let gh = GammaTable::from_scales(wh.scales(), hq.scales());
                    mlb_matvec_with(wh, hq, &gh, exec)?
                }
                RecurrentWeights::Full(wh) => matvec(wh, h)?,
            };
            for ((a, r), b) in acc.iter_mut().zip(rec.iter()).zip(g.bias_eff.iter()) {
                *a += r + b;
            }
            *slot = acc;
        }
        Ok(out)
    }

    /// Gate preactivations for real `x_t`, `h_{t-1}`, binarizing both as the
    /// mode prescribes.
    pub fn preactivations(&self, x: &[f64], h: &[f64]) -> Result<[Vec<f64>; 4]> {
        if x.len() != self.input_size {
            return Err(Error::dims("quantized lstm input", x.len(), self.input_size));
        }
        if h.len() != self.hidden_size {
            return Err(Error::dims("hidden state", h.len(), self.hidden_size));
        }
        let xq = self.quantize_activation(x)?;
        let hq = if self.config.binarize_recurrent {
            Some(self.quantize_activation(h)?)
        } else {
            None
        };
        self.preactivations_from(&xq, h, hq.as_ref())
    }

    pub fn cell_step(&self, x: &[f64], s: &QuantState) -> Result<QuantState> {
        self.cell_step_traced(x, s).map(|(s, _)| s)
    }

    #[allow(clippy::needless_range_loop)]
    pub fn cell_step_traced(&self, x: &[f64], s: &QuantState) -> Result<(QuantState, StepTrace)> {
        if s.c.len() != self.hidden_size {
            return Err(Error::dims("cell state", s.c.len(), self.hidden_size));
        }
        let pre = self.preactivations(x, &s.h)?;
        let n = self.hidden_size;
        let (c, h, recon) = match self.config.mode {
            QuantMode::BLstm | QuantMode::Mubinn1 => {
                let mut c = Vec::with_capacity(n);
                let mut h = Vec::with_capacity(n);
                for k in 0..n {
                    let f = sigmoid(pre[0][k]);
                    let i = sigmoid(pre[1][k]);
                    let g = pre[2][k].tanh();
                    let o = sigmoid(pre[3][k]);
                    let ck = f * s.c[k] + i * g;
                    c.push(ck);
                    h.push(o * ck.tanh());
                }
                (c, h, None)
            }
            QuantMode::Mubinn2 => {
                let lut = |t: &PwlTable, v: &[f64]| -> Vec<f64> { v.iter().map(|x| t.eval(*x)).collect() };
                let f = self.quantize_activation(&lut(&self.sig_lut, &pre[0]))?;
                let i = self.quantize_activation(&lut(&self.sig_lut, &pre[1]))?;
                let g = self.quantize_activation(&lut(&self.tanh_lut, &pre[2]))?;
                let o = self.quantize_activation(&lut(&self.sig_lut, &pre[3]))?;
                let c_prev = self.quantize_activation(&s.c)?;
                let keep = mlb_pointwise_mul(&f, &c_prev)?;
                let write = mlb_pointwise_mul(&i, &g)?;
                let c: Vec<f64> = keep.iter().zip(write.iter()).map(|(a, b)| a + b).collect();
                let o_hat = o.reconstruct_vec();
                let h = o_hat.iter().zip(&c).map(|(o, c)| o * self.tanh_lut.eval(*c)).collect();
                let recon = [f.reconstruct_vec(), i.reconstruct_vec(), g.reconstruct_vec(), o_hat];
                (c, h, Some(recon))
            }
        };
        let state = QuantState {
            h: RealVector::from_finite(h, "quantized cell step")?,
            c: RealVector::from_finite(c, "quantized cell step")?,
            t: s.t + 1,
        };
        Ok((
            state,
            StepTrace {
                preactivations: pre,
                gate_reconstructions: recon,
            },
        ))
    }

    pub fn forward(&self, seq: &[RealVector], s0: Option<QuantState>) -> Result<(QuantState, Vec<RealVector>)> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        let mut state = s0.unwrap_or_else(|| QuantState::zeros(self.hidden_size));
        let mut hs = Vec::with_capacity(seq.len());
        for x in seq {
            state = self.cell_step(x, &state)?;
            hs.push(state.h.clone());
        }
        Ok((state, hs))
    }

    /// Final logits and label through the full-precision dense head.
    pub fn predict(&self, seq: &[RealVector]) -> Result<(RealVector, usize)> {
        let (state, _) = self.forward(seq, None)?;
        self.head.classify(&state.h)
    }

    /// Gate preactivation error against `reference`, measured along the
    /// reference trajectory: at each step both models see the reference
    /// `h_{t-1}` and the same `x_t`.
    pub fn preactivation_error(&self, reference: &LstmWeights, seq: &[RealVector]) -> Result<PreactivationError> {
        if reference.input_size() != self.input_size || reference.hidden_size() != self.hidden_size {
            return Err(Error::dims(
                "reference model",
                format!("{}x{}", reference.input_size(), reference.hidden_size()),
                format!("{}x{}", self.input_size, self.hidden_size),
            ));
        }
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        let mut state = reference.initial_state();
        let (mut abs_sum, mut ref_sum, mut count) = (0.0, 0.0, 0usize);
        for x in seq {
            let want = reference.preactivations(x, &state.h)?;
            let got = self.preactivations(x, &state.h)?;
            for (w, g) in want.iter().zip(&got) {
                for (a, b) in w.iter().zip(g) {
                    abs_sum += (a - b).abs();
                    ref_sum += a.abs();
                    count += 1;
                }
            }
            state = reference.cell_step(x, &state)?;
        }
        Ok(PreactivationError {
            mean_abs: abs_sum / count as f64,
            relative: if ref_sum > 0.0 { abs_sum / ref_sum } else { abs_sum },
        })
    }

    /// L2 distance between each stored tensor's reconstruction and the
    /// matching tensor in `reference`, keyed by file tensor name.
    pub fn reconstruction_errors(&self, reference: &LstmWeights) -> Result<Vec<(String, f64)>> {
        let l2 = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() };
        let mut out = Vec::new();
        for gate in Gate::ALL {
            let (q, p) = (self.gate(gate), reference.gate(gate));
            if q.wx.rows() != p.wx.rows() || q.wx.cols() != p.wx.cols() {
                return Err(Error::dims(
                    "reference model",
                    format!("{}x{}", q.wx.rows(), q.wx.cols()),
                    format!("{:?}", p.wx.shape()),
                ));
            }
            let tag = gate.tag();
            out.push((format!("wx_{tag}"), l2(q.wx.reconstruct().data(), p.wx.data())));
            let wh = match &q.wh {
                RecurrentWeights::Binarized(m) => l2(m.reconstruct().data(), p.wh.data()),
                RecurrentWeights::Full(m) => l2(m.data(), p.wh.data()),
            };
            out.push((format!("wh_{tag}"), wh));
            out.push((format!("b_{tag}"), l2(&q.bias_eff, &p.bias)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreactivationError {
    pub mean_abs: f64,
    /// `Σ |q - r| / Σ |r|`.
    pub relative: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitpack::mlb_matvec;
    use crate::lstm::GateParams;
    use crate::numeric::SeededRng;

    fn random_model(seed: u64, input: usize, hidden: usize) -> LstmModel {
        LstmModel::random(input, hidden, 2, 0.8, &mut SeededRng::new(seed)).unwrap()
    }

    fn random_seq(rng: &mut SeededRng, t: usize, f: usize) -> Vec<RealVector> {
        (0..t).map(|_| rng.uniform(-1.0, 1.0, f).unwrap()).collect()
    }

    #[test]
    fn config_invariants() {
        assert!(QuantConfig::b_lstm().validate().is_ok());
        assert!(QuantConfig::for_mode(QuantMode::BLstm, 2, 1).validate().is_err());
        let mut c = QuantConfig::mubinn1(2, 2);
        c.pow2_scales = false;
        assert!(c.validate().is_err());
        let mut c = QuantConfig::mubinn2(3, 3);
        c.binarize_recurrent = false;
        assert!(c.validate().is_err());
        assert!(QuantConfig::mubinn2(0, 3).validate().is_err());
        assert!(QuantConfig::mubinn2(256, 3).validate().is_err());
    }

    #[test]
    fn b_lstm_weights_are_unit_signs() {
        let m = random_model(1, 5, 4);
        let q = QuantizedModel::quantize(&m, &QuantConfig::b_lstm()).unwrap();
        for gate in Gate::ALL {
            let g = q.gate(gate);
            assert_eq!(g.wx.scales(), &[1.0]);
            let rec = g.wx.reconstruct();
            let src = &m.weights.gate(gate).wx;
            for (r, s) in rec.data().iter().zip(src.data()) {
                assert_eq!(*r, if *s >= 0.0 { 1.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn sign_valued_weights_are_exact() {
        let mut rng = SeededRng::new(2);
        let sign_matrix = |rng: &mut SeededRng, r, c| RealMatrix::new(r, c, rng.signs(r * c)).unwrap();
        let gate = |rng: &mut SeededRng| GateParams {
            wx: sign_matrix(rng, 3, 4),
            wh: sign_matrix(rng, 3, 3),
            bias: RealVector::zeros(3),
        };
        let w = LstmWeights::new([gate(&mut rng), gate(&mut rng), gate(&mut rng), gate(&mut rng)]).unwrap();
        let head = DenseHead::new(RealMatrix::zeros(2, 3), RealVector::zeros(2)).unwrap();
        let model = LstmModel::new(w, head).unwrap();
        let q = QuantizedModel::quantize(&model, &QuantConfig::mubinn2(1, 1)).unwrap();
        for (_, err) in q.reconstruction_errors(&model.weights).unwrap() {
            assert_eq!(err, 0.0);
        }
        assert_eq!(q.gate(Gate::Input).wx.scales(), &[1.0]);
    }

    #[test]
    fn more_weight_levels_reduce_error() {
        let m = random_model(3, 8, 8);
        let e1 = QuantizedModel::quantize(&m, &QuantConfig::mubinn2(1, 1)).unwrap();
        let e3 = QuantizedModel::quantize(&m, &QuantConfig::mubinn2(1, 3)).unwrap();
        let r1 = e1.reconstruction_errors(&m.weights).unwrap();
        let r3 = e3.reconstruction_errors(&m.weights).unwrap();
        for ((name, a), (_, b)) in r1.iter().zip(&r3) {
            if name.starts_with('w') {
                assert!(b < a, "{name}: {b} !< {a}");
            }
        }
    }

    #[test]
    fn zero_model_mubinn2_stays_at_zero() {
        let w = LstmWeights::zeros(3, 4);
        let head = DenseHead::new(RealMatrix::zeros(2, 4), RealVector::zeros(2)).unwrap();
        let model = LstmModel::new(w, head).unwrap();
        let q = QuantizedModel::quantize(&model, &QuantConfig::mubinn2(8, 8)).unwrap();
        let mut s = QuantState::zeros(4);
        let mut rng = SeededRng::new(4);
        for _ in 0..20 {
            s = q.cell_step(&rng.uniform(-1.0, 1.0, 3).unwrap(), &s).unwrap();
            assert!(s.h.iter().chain(s.c.iter()).all(|v| v.abs() < 1e-9), "{s:?}");
        }
    }

    #[test]
    fn b_lstm_scalar_trace() {
        let gate = |b: f64| GateParams {
            wx: RealMatrix::zeros(1, 3),
            wh: RealMatrix::zeros(1, 1),
            bias: RealVector::filled(1, b),
        };
        let w = LstmWeights::new([gate(-100.0), gate(100.0), gate(1.0), gate(100.0)]).unwrap();
        let head = DenseHead::new(RealMatrix::zeros(2, 1), RealVector::zeros(2)).unwrap();
        let model = LstmModel::new(w, head).unwrap();
        let q = QuantizedModel::quantize(&model, &QuantConfig::b_lstm()).unwrap();
        // zero weights binarize to +1; x signs (+,-,+) and h = 0 -> +1
        let pre = q.preactivations(&[0.5, -0.2, 0.3], &[0.0]).unwrap();
        assert_eq!(pre[Gate::Forget.index()], vec![-98.0]);
        assert_eq!(pre[Gate::Input.index()], vec![102.0]);
        assert_eq!(pre[Gate::Cell.index()], vec![3.0]);
        let s = q.cell_step(&[0.5, -0.2, 0.3], &QuantState::zeros(1)).unwrap();
        assert!((s.c[0] - 3f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn mubinn1_preactivations_match_reconstruction_oracle() {
        let m = random_model(5, 6, 5);
        let q = QuantizedModel::quantize(&m, &QuantConfig::mubinn1(3, 2)).unwrap();
        let mut rng = SeededRng::new(6);
        let x = rng.uniform(-1.0, 1.0, 6).unwrap();
        let h = rng.uniform(-1.0, 1.0, 5).unwrap();
        let got = q.preactivations(&x, &h).unwrap();
        let xr = q.quantize_activation(&x).unwrap().reconstruct();
        let hr = q.quantize_activation(&h).unwrap().reconstruct();
        for gate in Gate::ALL {
            let g = q.gate(gate);
            let RecurrentWeights::Binarized(wh) = &g.wh else {
                panic!()
            };
            let a = matvec(&g.wx.reconstruct(), &xr).unwrap();
            let b = matvec(&wh.reconstruct(), &hr).unwrap();
            for k in 0..5 {
                let want = a[k] + b[k] + g.effective_bias()[k];
                let have = got[gate.index()][k];
                assert!((want - have).abs() <= 1e-9 * want.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn mode_nesting_single_level_unit_scales() {
        let m = random_model(7, 9, 6);
        let b = QuantizedModel::quantize(&m, &QuantConfig::b_lstm()).unwrap();
        let mut cfg = QuantConfig::mubinn1(1, 1);
        cfg.unit_scales = true;
        let q1 = QuantizedModel::quantize(&m, &cfg).unwrap();
        let mut rng = SeededRng::new(8);
        for _ in 0..50 {
            let x = rng.uniform(-1.0, 1.0, 9).unwrap();
            let h = rng.uniform(-1.0, 1.0, 6).unwrap();
            let unit = ScalePolicy::Given(vec![1.0]);
            let xq = mlb_quantize(&x, &unit).unwrap();
            let hq = mlb_quantize(&h, &unit).unwrap();
            assert_eq!(
                b.preactivations_from(&xq, &h, Some(&hq)).unwrap(),
                q1.preactivations_from(&xq, &h, Some(&hq)).unwrap()
            );
            assert_eq!(
                b.preactivations(&x, &h).unwrap(),
                b.preactivations_from(&xq, &h, Some(&hq)).unwrap()
            );
        }
    }

    #[test]
    fn full_precision_recurrent_path() {
        let m = random_model(9, 4, 3);
        let mut cfg = QuantConfig::mubinn1(2, 2);
        cfg.binarize_recurrent = false;
        let q = QuantizedModel::quantize(&m, &cfg).unwrap();
        let x = [0.3, -0.1, 0.8, -0.6];
        let h = [0.2, -0.4, 0.1];
        let got = q.preactivations(&x, &h).unwrap();
        let xq = q.quantize_activation(&x).unwrap();
        for gate in Gate::ALL {
            let g = q.gate(gate);
            let a = mlb_matvec(&g.wx, &xq).unwrap();
            let b = matvec(&m.weights.gate(gate).wh, &h).unwrap();
            for k in 0..3 {
                let want = a[k] + b[k] + g.effective_bias()[k];
                assert!((want - got[gate.index()][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlb_stored_bias_reconstructs() {
        let m = random_model(10, 4, 6);
        let mut cfg = QuantConfig::mubinn2(2, 4);
        cfg.bias_policy = BiasPolicy::MlbStored;
        let q = QuantizedModel::quantize(&m, &cfg).unwrap();
        let g = q.gate(Gate::Output);
        let StoredBias::Mlb(t) = &g.bias else { panic!() };
        assert_eq!(t.num_levels(), 4);
        assert_eq!(&t.reconstruct(), g.effective_bias());
    }

    #[test]
    fn forward_one_step_matches_cell() {
        let m = random_model(11, 4, 3);
        let q = QuantizedModel::quantize(&m, &QuantConfig::mubinn2(2, 2)).unwrap();
        let x = SeededRng::new(12).uniform(-1.0, 1.0, 4).unwrap();
        let (s, _) = q.forward(std::slice::from_ref(&x), None).unwrap();
        assert_eq!(s, q.cell_step(&x, &QuantState::zeros(3)).unwrap());
        assert!(q.forward(&[], None).is_err());
        assert!(q.cell_step(&[1.0; 3], &QuantState::zeros(3)).is_err());
    }

    #[test]
    fn error_shrinks_with_levels() {
        let m = random_model(13, 8, 8);
        let mut rng = SeededRng::new(14);
        let seq = random_seq(&mut rng, 20, 8);
        let err = |a| {
            QuantizedModel::quantize(&m, &QuantConfig::mubinn2(a, a))
                .unwrap()
                .preactivation_error(&m.weights, &seq)
                .unwrap()
                .relative
        };
        let (e1, e3, e5) = (err(1), err(3), err(5));
        assert!(e1 > e3 && e3 > e5, "{e1} {e3} {e5}");
    }

    #[test]
    fn gate_reconstructions_bounded() {
        let m = random_model(15, 6, 10);
        let q = QuantizedModel::quantize(&m, &QuantConfig::mubinn2(3, 3)).unwrap();
        let mut rng = SeededRng::new(16);
        let mut s = QuantState::zeros(10);
        for _ in 0..200 {
            let (next, trace) = q.cell_step_traced(&rng.uniform(-1.0, 1.0, 6).unwrap(), &s).unwrap();
            let rec = trace.gate_reconstructions.unwrap();
            for gate in [Gate::Forget, Gate::Input, Gate::Output] {
                assert!(rec[gate.index()].iter().all(|v| v.abs() <= 1.5));
            }
            s = next;
        }
    }
}
