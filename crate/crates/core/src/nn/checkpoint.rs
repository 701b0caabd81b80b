use serde::{Deserialize, Serialize};

use super::Mlp;
use crate::error::{Error, Result};

pub const NN_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// On-disk network: weights as nested `[layer][row][col]` arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub hidden_activation: Activation,
}

impl From<&Mlp> for MlpCheckpoint {
    fn from(net: &Mlp) -> Self {
        let weights = net
            .weights()
            .iter()
            .enumerate()
            .map(|(l, w)| w.chunks(net.dims()[l]).map(<[f64]>::to_vec).collect())
            .collect();
        Self {
            format_version: NN_FORMAT_VERSION,
            layer_dims: net.dims().to_vec(),
            weights,
            biases: net.biases().to_vec(),
            hidden_activation: Activation::Relu,
        }
    }
}

impl MlpCheckpoint {
    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.format_version != NN_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "network checkpoint",
                found: self.format_version,
                expected: NN_FORMAT_VERSION,
            });
        }
        let dims = &self.layer_dims;
        let mut flat = Vec::with_capacity(self.weights.len());
        for (l, rows) in self.weights.iter().enumerate() {
            let n_in = dims.get(l).copied().unwrap_or(0);
            if rows.iter().any(|r| r.len() != n_in) {
                return Err(Error::Malformed(format!("ragged weight matrix in layer {l}")));
            }
            flat.push(rows.concat());
        }
        Mlp::from_parts(dims, flat, self.biases.clone())
    }
}
