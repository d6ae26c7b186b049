//! Model checkpoints: one LMPT1 tensor per parameter plus a JSON manifest
//! describing the architecture and the run that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lmpkit_core::pooling::{PoolKind, PoolingKernel};
use lmpkit_core::trainer::{ConvLayerSpec, ToyModel};
use lmpkit_core::{GradPair, Tensor};

use crate::error::CliError;
use crate::tensor_io::{read_tensor, write_tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    layers: Vec<LayerEntry>,
    conv_specs: Vec<ConvLayerSpec>,
    pooling_kind: PoolKind,
    epsilon: f64,
    num_classes: usize,
    epoch: usize,
    seed: u64,
    config: serde_json::Value,
}

fn named_params(model: &ToyModel) -> Vec<(String, &Tensor)> {
    let mut out: Vec<(String, &Tensor)> = model
        .conv_kernels
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("conv{}", i + 1), &p.value))
        .collect();
    out.push(("fc_weight".into(), &model.fc_weight.value));
    out.push(("fc_bias".into(), &model.fc_bias.value));
    out
}

/// Writes `model` into `dir`, echoing `config` into the manifest.
pub fn save_model(
    dir: &Path,
    model: &ToyModel,
    epoch: usize,
    seed: u64,
    config: &serde_json::Value,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
    let mut layers = Vec::new();
    for (name, tensor) in named_params(model) {
        let file = format!("{name}.lmpt");
        write_tensor(&dir.join(&file), tensor)?;
        layers.push(LayerEntry { name, file });
    }
    let manifest = CheckpointManifest {
        layers,
        conv_specs: model.conv_specs.clone(),
        pooling_kind: model.pooling.kind(),
        epsilon: model.pooling.epsilon(),
        num_classes: model.num_classes,
        epoch,
        seed,
        config: config.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path.display().to_string(), e))
}

/// Loads a model written by [`save_model`]. Returns the model and its
/// pooling label components.
pub fn load_model(dir: &Path) -> Result<ToyModel, CliError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::io(&path.display().to_string(), e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Io {
            message: format!("{}: {e}", path.display()),
        })?;
    let mut tensors = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        tensors.push((layer.name.clone(), read_tensor(&dir.join(&layer.file))?));
    }
    let expect = |name: &str| -> Result<Tensor, CliError> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| CliError::Io {
                message: format!("checkpoint {} is missing layer {name}", dir.display()),
            })
    };
    let mut conv_kernels = Vec::with_capacity(manifest.conv_specs.len());
    for i in 0..manifest.conv_specs.len() {
        conv_kernels.push(GradPair::new(expect(&format!("conv{}", i + 1))?));
    }
    let pooling = match manifest.pooling_kind {
        PoolKind::LeakyMax => PoolingKernel::leaky_max(manifest.epsilon)?,
        kind => PoolingKernel::from_kind(kind, 0.0)?,
    };
    Ok(ToyModel {
        conv_specs: manifest.conv_specs,
        conv_kernels,
        fc_weight: GradPair::new(expect("fc_weight")?),
        fc_bias: GradPair::new(expect("fc_bias")?),
        pooling,
        num_classes: manifest.num_classes,
    })
}

/// Reads back only the pooling descriptor, for labelling reports.
pub fn load_pooling_label(dir: &Path) -> Result<String, CliError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::io(&path.display().to_string(), e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Io {
            message: format!("{}: {e}", path.display()),
        })?;
    Ok(crate::config::pooling_label(
        manifest.pooling_kind,
        manifest.epsilon,
    ))
}
