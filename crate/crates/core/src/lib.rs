//! Multi-level binarized LSTM inference.
//!
//! The crate pairs a full-precision LSTM (the oracle) with a quantized engine
//! in which every real tensor is replaced by a stack of packed sign planes
//! and per-level scaling factors. Products between such stacks reduce to
//! xnor + popcount over 64-bit words.
//!
//! Layout conventions used throughout:
//! - matrices are row-major `f64`;
//! - a sign `+1` is stored as bit `1`, `-1` as bit `0`, and `sign(0) = +1`;
//! - bit `j` of a plane lives in bit `j % 64` of word `j / 64`.
//!
//! With the default `parallel` feature, row-wise matrix products and batch
//! evaluation run on rayon. Every parallel path computes independent items,
//! so results are bit-identical to the sequential fallback.

mod exec;

pub mod bitpack;
pub mod delay;
pub mod error;
pub mod io;
pub mod lstm;
pub mod lut;
pub mod mlb;
pub mod numeric;
pub mod qlstm;
pub mod task;

pub use bitpack::{BinaryPlane, GammaTable, QuantizedMatrix};
pub use error::{Error, Result};
pub use exec::Execution;
pub use io::dataset::{Dataset, Sample};
pub use io::model::{load_model, save_model, Model};
pub use lstm::{DenseHead, Gate, LstmModel, LstmState, LstmWeights};
pub use lut::{ActivationKind, PwlTable};
pub use mlb::{MlbTensor, ScalePolicy};
pub use numeric::{RealMatrix, RealVector, SeededRng};
pub use qlstm::{BiasPolicy, QuantConfig, QuantMode, QuantState, QuantizedModel};
pub use task::{build_integrator_model, evaluate, evaluate_with, SequenceClassifier, SignMeanTask};
