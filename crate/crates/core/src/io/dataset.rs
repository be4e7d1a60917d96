//! CSV sequence datasets.
//!
//! Line 1 is the header `T,F`. Every following line is an integer label and
//! then `T * F` reals in time-major order (all features of step 0 first).
//! Reals are written in Rust's shortest round-trip form, so save → load
//! restores every double exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::RealVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: usize,
    /// `T * F` values, time-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    timesteps: usize,
    features: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(timesteps: usize, features: usize, samples: Vec<Sample>) -> Result<Self> {
        if timesteps == 0 || features == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs T >= 1 and F >= 1, got T={timesteps} F={features}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.values.len() != timesteps * features {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has {} values, expected {}",
                    s.values.len(),
                    timesteps * features
                )));
            }
            if let Some(j) = s.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("sample {i} value {j} is not finite")));
            }
        }
        Ok(Dataset {
            timesteps,
            features,
            samples,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample `i` split into `T` feature vectors.
    pub fn sequence(&self, i: usize) -> Vec<RealVector> {
        self.samples[i]
            .values
            .chunks_exact(self.features)
            .map(|c| RealVector::new(c.to_vec()).expect("validated on construction"))
            .collect()
    }

    /// Errors on the first label outside `0..num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.samples.iter().position(|s| s.label >= num_classes) {
            Some(i) => Err(Error::Dataset {
                row: i + 2,
                col: 1,
                msg: format!("label {} out of range for {num_classes} classes", self.samples[i].label),
            }),
            None => Ok(()),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.timesteps, self.features);
        for s in &self.samples {
            out.push_str(&s.label.to_string());
            for v in &s.values {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parses CSV text. Rows and columns in errors are 1-based.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(r) => r.map_err(|e| csv_error(1, e))?,
            None => {
                return Err(Error::Dataset {
                    row: 1,
                    col: 1,
                    msg: "missing header `T,F`".into(),
                })
            }
        };
        if header.len() != 2 {
            return Err(Error::Dataset {
                row: 1,
                col: header.len().min(3),
                msg: format!("header must be `T,F`, found {} fields", header.len()),
            });
        }
        let dim = |col: usize| -> Result<usize> {
            match header[col - 1].parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::Dataset {
                    row: 1,
                    col,
                    msg: format!("header field {:?} is not a positive integer", &header[col - 1]),
                }),
            }
        };
        let (timesteps, features) = (dim(1)?, dim(2)?);
        let width = 1 + timesteps * features;
        let mut samples = Vec::new();
        for (i, rec) in records.enumerate() {
            let rec = rec.map_err(|e| csv_error(i + 2, e))?;
            let row = rec.position().map_or(i + 2, |p| p.line() as usize);
            if rec.len() != width {
                return Err(Error::Dataset {
                    row,
                    col: rec.len().min(width) + 1,
                    msg: format!(
                        "expected {width} fields (label + {timesteps}x{features}), found {}",
                        rec.len()
                    ),
                });
            }
            let label = rec[0].parse::<usize>().map_err(|_| Error::Dataset {
                row,
                col: 1,
                msg: format!("label {:?} is not a non-negative integer", &rec[0]),
            })?;
            let mut values = Vec::with_capacity(width - 1);
            for (j, field) in rec.iter().enumerate().skip(1) {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        return Err(Error::Dataset {
                            row,
                            col: j + 1,
                            msg: format!("{field:?} is not a finite number"),
                        })
                    }
                }
            }
            samples.push(Sample { label, values });
        }
        Dataset::new(timesteps, features, samples)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, self.to_csv().as_bytes())
    }
}

fn csv_error(row: usize, e: csv::Error) -> Error {
    Error::Dataset {
        row: e.position().map_or(row, |p| p.line() as usize),
        col: 0,
        msg: e.to_string(),
    }
}
