//! Full-precision LSTM cell, sequence forward pass and dense classifier head.
//!
//! This is the oracle the quantized engine is measured against, so it uses
//! the exact logistic and hyperbolic tangent functions:
//!
//! ```text
//! f = sig(Wfx x + Wfh h + bf)    i = sig(Wix x + Wih h + bi)
//! g = tanh(Wgx x + Wgh h + bg)   o = sig(Wox x + Woh h + bo)
//! c' = f * c + i * g             h' = o * tanh(c')
//! ```

use crate::error::{Error, Result};
use crate::numeric::{matvec, RealMatrix, RealVector, SeededRng};

/// The four LSTM gates, in the order used for storage and serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Forget,
    Input,
    /// The `tanh` candidate, `g`.
    Cell,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Cell, Gate::Output];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short tag used in tensor names (`wx_f`, `b_g`, ...).
    pub fn tag(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Cell => "g",
            Gate::Output => "o",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `hidden x input`
    pub wx: RealMatrix,
    /// `hidden x hidden`
    pub wh: RealMatrix,
    pub bias: RealVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    input_size: usize,
    hidden_size: usize,
    gates: [GateParams; 4],
}

impl LstmWeights {
    /// `gates` is indexed by [`Gate::index`].
    pub fn new(gates: [GateParams; 4]) -> Result<Self> {
        let hidden_size = gates[0].wx.rows();
        let input_size = gates[0].wx.cols();
        for (gate, p) in Gate::ALL.iter().zip(&gates) {
            let ctx = gate.tag();
            if p.wx.shape() != (hidden_size, input_size) {
                return Err(Error::dims(
                    "gate input weights",
                    format!("{ctx}: {:?}", p.wx.shape()),
                    format!("expected {:?}", (hidden_size, input_size)),
                ));
            }
            if p.wh.shape() != (hidden_size, hidden_size) {
                return Err(Error::dims(
                    "gate recurrent weights",
                    format!("{ctx}: {:?}", p.wh.shape()),
                    format!("expected {:?}", (hidden_size, hidden_size)),
                ));
            }
            if p.bias.len() != hidden_size {
                return Err(Error::dims(
                    "gate bias",
                    format!("{ctx}: {}", p.bias.len()),
                    hidden_size,
                ));
            }
        }
        Ok(LstmWeights {
            input_size,
            hidden_size,
            gates,
        })
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let gate = || GateParams {
            wx: RealMatrix::zeros(hidden_size, input_size),
            wh: RealMatrix::zeros(hidden_size, hidden_size),
            bias: RealVector::zeros(hidden_size),
        };
        LstmWeights {
            input_size,
            hidden_size,
            gates: [gate(), gate(), gate(), gate()],
        }
    }

    /// Weights and biases drawn uniformly from `[-scale, scale)`.
    pub fn random(input_size: usize, hidden_size: usize, scale: f64, rng: &mut SeededRng) -> Result<Self> {
        let mut gate = || -> Result<GateParams> {
            Ok(GateParams {
                wx: rng.uniform_matrix(hidden_size, input_size, -scale, scale)?,
                wh: rng.uniform_matrix(hidden_size, hidden_size, -scale, scale)?,
                bias: rng.uniform(-scale, scale, hidden_size)?,
            })
        };
        Self::new([gate()?, gate()?, gate()?, gate()?])
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn gate(&self, gate: Gate) -> &GateParams {
        &self.gates[gate.index()]
    }

    pub fn gates(&self) -> &[GateParams; 4] {
        &self.gates
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.hidden_size)
    }

    /// Gate preactivations `Wx x + Wh h + b`, indexed by [`Gate::index`].
    pub fn preactivations(&self, x: &[f64], h: &[f64]) -> Result<[RealVector; 4]> {
        if x.len() != self.input_size {
            return Err(Error::dims("lstm input", x.len(), self.input_size));
        }
        if h.len() != self.hidden_size {
            return Err(Error::dims("lstm hidden state", h.len(), self.hidden_size));
        }
        let pre = |p: &GateParams| -> Result<RealVector> {
            let a = matvec(&p.wx, x)?;
            let b = matvec(&p.wh, h)?;
            let out = a
                .iter()
                .zip(b.iter())
                .zip(p.bias.iter())
                .map(|((a, b), c)| a + b + c)
                .collect();
            RealVector::from_finite(out, "lstm preactivation")
        };
        Ok([
            pre(&self.gates[0])?,
            pre(&self.gates[1])?,
            pre(&self.gates[2])?,
            pre(&self.gates[3])?,
        ])
    }

    pub fn cell_step(&self, x: &[f64], s: &LstmState) -> Result<LstmState> {
        if s.c.len() != self.hidden_size {
            return Err(Error::dims("lstm cell state", s.c.len(), self.hidden_size));
        }
        let [pf, pi, pg, po] = self.preactivations(x, &s.h)?;
        let n = self.hidden_size;
        let mut c = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        for k in 0..n {
            let f = sigmoid(pf[k]);
            let i = sigmoid(pi[k]);
            let g = pg[k].tanh();
            let o = sigmoid(po[k]);
            let ck = f * s.c[k] + i * g;
            c.push(ck);
            h.push(o * ck.tanh());
        }
        Ok(LstmState {
            h: RealVector::from_finite(h, "lstm cell step")?,
            c: RealVector::from_finite(c, "lstm cell step")?,
            t: s.t + 1,
        })
    }

    /// Runs the cell over `seq`, returning the final state and every `h_t`.
    pub fn forward(&self, seq: &[RealVector], s0: Option<LstmState>) -> Result<(LstmState, Vec<RealVector>)> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        let mut state = s0.unwrap_or_else(|| self.initial_state());
        let mut hs = Vec::with_capacity(seq.len());
        for x in seq {
            state = self.cell_step(x, &state)?;
            hs.push(state.h.clone());
        }
        Ok((state, hs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: RealVector,
    pub c: RealVector,
    pub t: usize,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            h: RealVector::zeros(hidden_size),
            c: RealVector::zeros(hidden_size),
            t: 0,
        }
    }
}

/// Final classification layer, `logits = W h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    w: RealMatrix,
    b: RealVector,
}

impl DenseHead {
    pub fn new(w: RealMatrix, b: RealVector) -> Result<Self> {
        if w.rows() != b.len() {
            return Err(Error::dims(
                "dense head",
                format!("W {:?}", w.shape()),
                format!("b {}", b.len()),
            ));
        }
        Ok(DenseHead { w, b })
    }

    pub fn weights(&self) -> &RealMatrix {
        &self.w
    }

    pub fn bias(&self) -> &RealVector {
        &self.b
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w.cols()
    }

    /// Raw logits and the argmax label. Ties go to the lowest index.
    pub fn classify(&self, h: &[f64]) -> Result<(RealVector, usize)> {
        let mut logits = matvec(&self.w, h)?.into_vec();
        for (l, b) in logits.iter_mut().zip(self.b.iter()) {
            *l += b;
        }
        let label = argmax(&logits);
        Ok((RealVector::from_finite(logits, "dense head")?, label))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// An LSTM layer followed by a dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub weights: LstmWeights,
    pub head: DenseHead,
}

impl LstmModel {
    pub fn new(weights: LstmWeights, head: DenseHead) -> Result<Self> {
        if head.hidden_size() != weights.hidden_size() {
            return Err(Error::dims(
                "dense head input",
                head.hidden_size(),
                weights.hidden_size(),
            ));
        }
        Ok(LstmModel { weights, head })
    }

    pub fn random(input: usize, hidden: usize, classes: usize, scale: f64, rng: &mut SeededRng) -> Result<Self> {
        let weights = LstmWeights::random(input, hidden, scale, rng)?;
        let head = DenseHead::new(
            rng.uniform_matrix(classes, hidden, -scale, scale)?,
            rng.uniform(-scale, scale, classes)?,
        )?;
        Self::new(weights, head)
    }

    pub fn predict(&self, seq: &[RealVector]) -> Result<(RealVector, usize)> {
        let (state, _) = self.weights.forward(seq, None)?;
        self.head.classify(&state.h)
    }
}
