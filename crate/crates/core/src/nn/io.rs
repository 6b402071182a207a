//! Model files.
//!
//! A model is stored as a UTF-8 JSON document:
//!
//! ```text
//! {
//!   "format": "silab-mlp",
//!   "version": 1,
//!   "layer_dims": [4, 64, 64, 4],
//!   "hidden_activation": "relu",
//!   "output_activation": "tanh",
//!   "input_shift": [...],
//!   "input_scale": [...],
//!   "weights": [[...], ...],
//!   "biases": [[...], ...]
//! }
//! ```
//!
//! `weights[i]` is layer `i`'s `(in_dim, out_dim)` matrix flattened in
//! row-major order. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Dense, HiddenActivation, MlpModel, OutputActivation};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "silab-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    hidden_activation: String,
    output_activation: String,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

pub fn model_to_json(model: &MlpModel) -> String {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        layer_dims: model.layer_dims(),
        hidden_activation: model.hidden_activation().name().into(),
        output_activation: model.output_activation().name().into(),
        input_shift: model.input_shift().to_vec(),
        input_scale: model.input_scale().to_vec(),
        weights: model
            .layers()
            .iter()
            .map(|l| l.weight.iter().copied().collect())
            .collect(),
        biases: model.layers().iter().map(|l| l.bias.to_vec()).collect(),
    };
    serde_json::to_string_pretty(&file).expect("model file serializes")
}

pub fn model_from_json(text: &str) -> Result<MlpModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "unknown format tag {:?}",
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {} (expected {MODEL_VERSION})",
            file.version
        )));
    }
    let hidden = HiddenActivation::parse(&file.hidden_activation)
        .ok_or_else(|| Error::Format(format!("unknown activation {:?}", file.hidden_activation)))?;
    let output = OutputActivation::parse(&file.output_activation)
        .ok_or_else(|| Error::Format(format!("unknown activation {:?}", file.output_activation)))?;
    let dims = &file.layer_dims;
    if dims.len() < 2 || file.weights.len() != dims.len() - 1 || file.biases.len() != dims.len() - 1
    {
        return Err(Error::Format(
            "layer count inconsistent with layer_dims".into(),
        ));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        if file.weights[i].len() != fan_in * fan_out || file.biases[i].len() != fan_out {
            return Err(Error::Format(format!(
                "layer {i}: weight count inconsistent with dims {fan_in}x{fan_out}"
            )));
        }
        layers.push(Dense {
            weight: Array2::from_shape_vec((fan_in, fan_out), file.weights[i].clone())
                .map_err(|e| Error::Format(e.to_string()))?,
            bias: Array1::from(file.biases[i].clone()),
        });
    }
    let mut model = MlpModel::from_layers(layers, hidden, output)
        .map_err(|e| Error::Format(format!("invalid model: {e}")))?;
    model
        .set_input_normalization(&file.input_shift, &file.input_scale)
        .map_err(|e| Error::Format(format!("invalid input normalization: {e}")))?;
    Ok(model)
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    model_from_json(&fs::read_to_string(path)?)
}
