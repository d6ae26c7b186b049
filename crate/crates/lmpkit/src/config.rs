//! Experiment configuration: a JSON document with one section per
//! subsystem. Unknown keys are rejected, defaults are echoed back out via
//! `config.resolved.json`, and individual keys can be overridden from the
//! command line with dotted paths (`train.epochs=5`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use lmpkit_core::clustering::ClusteringConfig;
use lmpkit_core::metrics::PckConfig;
use lmpkit_core::pooling::PoolKind;
use lmpkit_core::selection::SelectionConfig;
use lmpkit_core::synth::SceneSpec;
use lmpkit_core::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scene: SceneSpec,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneSpec::default(),
            train_per_class: 500,
            test_per_class: 100,
            seed: 0,
        }
    }
}

/// The `train` section. Selection and clustering live in their own
/// top-level sections and are merged in when building the core config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epsilon: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub pooling_kind: PoolKind,
    pub enable_maskout: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            epsilon: d.epsilon,
            init_scale: d.init_scale,
            seed: d.seed,
            pooling_kind: d.pooling_kind,
            enable_maskout: d.enable_maskout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub train: TrainSection,
    pub selection: SelectionConfig,
    pub clustering: ClusteringConfig,
    pub pck: PckConfig,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            train: TrainSection::default(),
            selection: SelectionConfig::default(),
            clustering: ClusteringConfig::default(),
            pck: PckConfig::default(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    /// Core training config with the shared selection/clustering sections
    /// folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            epsilon: self.train.epsilon,
            init_scale: self.train.init_scale,
            seed: self.train.seed,
            pooling_kind: self.train.pooling_kind,
            enable_maskout: self.train.enable_maskout,
            selection: self.selection,
            clustering: self.clustering,
        }
    }

    /// Human-facing label for the configured pooling kernel.
    pub fn pooling_label(&self) -> String {
        pooling_label(self.train.pooling_kind, self.train.epsilon)
    }
}

pub fn pooling_label(kind: PoolKind, epsilon: f64) -> String {
    match kind {
        PoolKind::Average => "avg".into(),
        PoolKind::Max => "max".into(),
        PoolKind::LeakyMax => format!("lmp(eps={epsilon})"),
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> Option<String> {
    let mut out = String::new();
    for segment in path.iter() {
        use serde_path_to_error::Segment;
        match segment {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{key}")),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => return None,
        }
    }
    Some(out)
}

fn typed_from_value(value: serde_json::Value) -> Result<ExperimentConfig, CliError> {
    let result: Result<ExperimentConfig, _> =
        serde_path_to_error::deserialize(value);
    result.map_err(|e| CliError::Config {
        message: e.inner().to_string(),
        path: pointer_of(e.path()),
    })
}

/// Applies one `dotted.path=value` override onto the raw JSON document.
/// Values parse as JSON when possible and fall back to strings, so
/// `train.epochs=5` and `train.pooling_kind=average` both work.
fn apply_override(doc: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| CliError::Config {
        message: format!("override '{spec}' is not of the form key.path=value"),
        path: None,
    })?;
    let value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| CliError::Config {
            message: format!("override path '{path}' descends into a non-object"),
            path: Some(format!("/{}", segments[..i].join("/"))),
        })?;
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), value);
            break;
        }
        node = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}

/// Loads a config file and applies dotted-path overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&path.display().to_string(), e))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            message: format!("{}: {e}", path.display()),
            path: None,
        })?;
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    typed_from_value(doc)
}

/// Writes the fully-resolved config (defaults included) into the output
/// directory so every run is self-describing.
pub fn write_resolved(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = Path::new(&cfg.output_dir);
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
    let path = dir.join("config.resolved.json");
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path.display().to_string(), e))
}
