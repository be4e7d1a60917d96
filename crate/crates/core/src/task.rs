//! Seeded synthetic sequence classification with a closed-form solver.
//!
//! Every feature of a class-`y` sample is `(2y - 1) * margin + N(0, noise)`.
//! [`build_integrator_model`] wires an LSTM whose cell state sums the scaled
//! input mean over time, so the sign of the final hidden state is the label.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io::dataset::{Dataset, Sample};
use crate::io::model::Model;
use crate::lstm::{DenseHead, GateParams, LstmModel, LstmWeights};
use crate::numeric::{RealMatrix, RealVector, SeededRng};
use crate::qlstm::QuantizedModel;

#[derive(Debug, Clone, PartialEq)]
pub struct SignMeanTask {
    pub timesteps: usize,
    pub features: usize,
    pub noise: f64,
    pub margin: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SignMeanTask {
    fn default() -> Self {
        SignMeanTask {
            timesteps: 64,
            features: 8,
            noise: 1.0,
            margin: 0.3,
            samples: 512,
            seed: 0,
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 4;

/// Shapes used for benchmarks at the scale of a 32-channel, 1300-step
/// recording with 100 hidden units.
pub const LARGE_SHAPE: (usize, usize, usize) = (1300, 32, 100);

impl SignMeanTask {
    pub fn with_seed(seed: u64) -> Self {
        SignMeanTask {
            seed,
            ..Self::default()
        }
    }

    pub fn large_shape(seed: u64) -> Self {
        SignMeanTask {
            timesteps: LARGE_SHAPE.0,
            features: LARGE_SHAPE.1,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.features == 0 {
            return Err(Error::InvalidArgument("task needs T >= 1 and F >= 1".into()));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    /// Labels alternate 0, 1, 0, ... so classes stay balanced within one.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = SeededRng::new(self.seed);
        let n = self.timesteps * self.features;
        let samples = (0..self.samples)
            .map(|i| {
                let label = i % 2;
                let mean = (2.0 * label as f64 - 1.0) * self.margin;
                let values = (0..n).map(|_| rng.normal(mean, self.noise)).collect();
                Sample { label, values }
            })
            .collect();
        Dataset::new(self.timesteps, self.features, samples)
    }
}

pub fn gen_dataset(task: &SignMeanTask) -> Result<Dataset> {
    task.generate()
}

/// Hand-set two-class LSTM that integrates the input mean.
///
/// Forget, input and output gates are held open by a bias of 10, the
/// candidate is `tanh(0.1 * mean(x))`, recurrent weights are zero, and the
/// head compares `-sum(h)` against `+sum(h)`.
pub fn build_integrator_model(features: usize, hidden: usize) -> Result<LstmModel> {
    if features == 0 || hidden == 0 {
        return Err(Error::InvalidArgument(
            "integrator needs features >= 1 and hidden >= 1".into(),
        ));
    }
    let open = |_: ()| GateParams {
        wx: RealMatrix::zeros(hidden, features),
        wh: RealMatrix::zeros(hidden, hidden),
        bias: RealVector::filled(hidden, 10.0),
    };
    let k = 0.1 / features as f64;
    let candidate = GateParams {
        wx: RealMatrix::new(hidden, features, vec![k; hidden * features])?,
        wh: RealMatrix::zeros(hidden, hidden),
        bias: RealVector::zeros(hidden),
    };
    let weights = LstmWeights::new([open(()), open(()), candidate, open(())])?;
    let mut w = vec![-1.0; hidden];
    w.extend(std::iter::repeat_n(1.0, hidden));
    let head = DenseHead::new(RealMatrix::new(2, hidden, w)?, RealVector::zeros(2))?;
    LstmModel::new(weights, head)
}

/// Anything that maps a sequence to a class label.
pub trait SequenceClassifier: Sync {
    fn input_size(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn classify(&self, seq: &[RealVector]) -> Result<usize>;
}

impl SequenceClassifier for LstmModel {
    fn input_size(&self) -> usize {
        self.weights.input_size()
    }

    fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn classify(&self, seq: &[RealVector]) -> Result<usize> {
        Ok(self.predict(seq)?.1)
    }
}

impl SequenceClassifier for QuantizedModel {
    fn input_size(&self) -> usize {
        QuantizedModel::input_size(self)
    }

    fn num_classes(&self) -> usize {
        QuantizedModel::num_classes(self)
    }

    fn classify(&self, seq: &[RealVector]) -> Result<usize> {
        Ok(self.predict(seq)?.1)
    }
}

impl SequenceClassifier for Model {
    fn input_size(&self) -> usize {
        Model::input_size(self)
    }

    fn num_classes(&self) -> usize {
        Model::num_classes(self)
    }

    fn classify(&self, seq: &[RealVector]) -> Result<usize> {
        Ok(self.predict(seq)?.1)
    }
}

/// Predicted label for every sample, in dataset order.
pub fn predict_all<M: SequenceClassifier + ?Sized>(model: &M, data: &Dataset, exec: Execution) -> Result<Vec<usize>> {
    if data.features() != model.input_size() {
        return Err(Error::dims(
            "dataset features vs model input",
            data.features(),
            model.input_size(),
        ));
    }
    exec.map_range(data.len(), |i| model.classify(&data.sequence(i)))
        .into_iter()
        .collect()
}

/// Fraction of samples whose predicted label matches. An empty dataset
/// scores 0.
pub fn evaluate<M: SequenceClassifier + ?Sized>(model: &M, data: &Dataset) -> Result<f64> {
    evaluate_with(model, data, Execution::default())
}

pub fn evaluate_with<M: SequenceClassifier + ?Sized>(model: &M, data: &Dataset, exec: Execution) -> Result<f64> {
    data.check_labels(model.num_classes())?;
    let preds = predict_all(model, data, exec)?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let correct = preds.iter().zip(data.samples()).filter(|(p, s)| **p == s.label).count();
    Ok(correct as f64 / preds.len() as f64)
}
