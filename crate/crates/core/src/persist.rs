//! Versioned JSON model files.
//!
//! Floats are written in the shortest form that parses back to the same bits
//! (at most 17 significant digits), so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Head, Layout, Network, TrainConfig};

pub const MODEL_FORMAT: &str = "fairlens-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub layers: Vec<LayerRecord>,
    pub head_f: Head,
    pub head_g: Option<Head>,
    pub config: Option<TrainConfig>,
    pub seed: Option<u64>,
}

impl ModelFile {
    pub fn from_network(net: &Network, config: Option<&TrainConfig>) -> Self {
        let mut fan_in = net.input_dim();
        let layers = (0..net.n_layers())
            .map(|l| {
                let (w, b) = net.layer(l);
                let rec = LayerRecord {
                    inputs: fan_in,
                    outputs: b.len(),
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                };
                fan_in = b.len();
                rec
            })
            .collect();
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            input_dim: net.input_dim(),
            layers,
            head_f: net.head_f(),
            head_g: net.head_g(),
            config: config.cloned(),
            seed: config.map(|c| c.seed),
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Schema(format!("unexpected format `{}`", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Schema(format!("unsupported model version {}", self.version)));
        }
        if self.layers.is_empty() {
            return Err(Error::Schema("model has no hidden layers".into()));
        }
        let widths: Vec<usize> = self.layers.iter().map(|l| l.outputs).collect();
        let mut fan_in = self.input_dim;
        let mut params = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != fan_in || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Schema(format!("layer {i} has inconsistent shape")));
            }
            params.extend_from_slice(&l.weights);
            params.extend_from_slice(&l.bias);
            fan_in = l.outputs;
        }
        for head in std::iter::once(&self.head_f).chain(self.head_g.as_ref()) {
            if head.weights.len() != fan_in {
                return Err(Error::Schema("head width differs from last layer".into()));
            }
            params.extend_from_slice(&head.weights);
            params.push(head.bias);
        }
        let layout = Layout::new(self.input_dim, &widths, self.head_g.is_some());
        Ok(Network::from_parts(layout, params))
    }
}

pub fn save_model(net: &Network, config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(&ModelFile::from_network(net, config))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Network, Option<TrainConfig>)> {
    let file: ModelFile = serde_json::from_slice(&std::fs::read(path)?)?;
    let net = file.to_network()?;
    Ok((net, file.config))
}
