//! Bias-free ELU perceptron, its derivatives, AdamW and the learning-rate schedule.

mod mlp;
mod optim;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use mlp::{init_mlp, Gradient, MlpModel};
pub use optim::{lr_at_epoch, AdamW, OptimizerConfig};

use crate::error::{Error, Result};

/// On-disk form of a network: row-major weights plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub layer_dims: Vec<usize>,
    /// One row-major array per layer.
    pub weights: Vec<Vec<f64>>,
    pub activation: String,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl WeightsFile {
    pub fn from_model(model: &MlpModel, seed: u64, optimizer: OptimizerConfig) -> Self {
        WeightsFile {
            layer_dims: model.layer_dims.clone(),
            weights: model
                .weights
                .iter()
                .map(|w| w.transpose().as_slice().to_vec())
                .collect(),
            activation: "elu".into(),
            seed,
            optimizer,
        }
    }

    pub fn to_model(&self) -> Result<MlpModel> {
        if self.activation != "elu" {
            return Err(Error::Format(format!("unsupported activation {:?}", self.activation)));
        }
        if self.layer_dims.len() < 2 || self.weights.len() != self.layer_dims.len() - 1 {
            return Err(Error::Format("weights do not match layer_dims".into()));
        }
        let weights = self
            .layer_dims
            .windows(2)
            .zip(&self.weights)
            .map(|(d, vals)| {
                if vals.len() != d[0] * d[1] {
                    return Err(Error::DimensionMismatch {
                        expected: d[0] * d[1],
                        found: vals.len(),
                    });
                }
                Ok(DMatrix::from_row_slice(d[1], d[0], vals))
            })
            .collect::<Result<_>>()?;
        Ok(MlpModel {
            layer_dims: self.layer_dims.clone(),
            weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_bitwise() {
        let m = init_mlp(&[3, 5, 2], 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        WeightsFile::from_model(&m, 4, OptimizerConfig::default()).save(&path).unwrap();
        let back = WeightsFile::load(&path).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
        assert_eq!(back.seed, 4);
    }

    #[test]
    fn row_major_layout() {
        let m = MlpModel {
            layer_dims: vec![2, 1],
            weights: vec![DMatrix::from_row_slice(1, 2, &[1.0, 2.0])],
        };
        let f = WeightsFile::from_model(&m, 0, OptimizerConfig::default());
        assert_eq!(f.weights[0], vec![1.0, 2.0]);
    }
}
