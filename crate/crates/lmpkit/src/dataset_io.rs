//! Materialized datasets: LMPT1 image files plus a JSON manifest per
//! split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lmpkit_core::synth::SyntheticScene;

use crate::error::CliError;
use crate::tensor_io::{read_tensor, write_tensor};

/// One manifest line. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub keypoints: Vec<[usize; 2]>,
}

/// Writes `scenes` under `dir` as `scene_#####.lmpt` plus `manifest.json`.
pub fn save_split(dir: &Path, scenes: &[SyntheticScene]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let name = format!("scene_{i:05}.lmpt");
        write_tensor(&dir.join(&name), &scene.image)?;
        entries.push(ManifestEntry {
            path: name,
            label: scene.label,
            keypoints: scene.keypoints.iter().map(|&(r, c)| [r, c]).collect(),
        });
    }
    let manifest = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    std::fs::write(&manifest, text + "\n")
        .map_err(|e| CliError::io(&manifest.display().to_string(), e))
}

/// Reads a split previously written by [`save_split`].
pub fn load_split(dir: &Path) -> Result<Vec<SyntheticScene>, CliError> {
    let manifest = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest)
        .map_err(|e| CliError::io(&manifest.display().to_string(), e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| CliError::Io {
        message: format!("{}: {e}", manifest.display()),
    })?;
    entries
        .into_iter()
        .map(|entry| {
            let image = read_tensor(&dir.join(&entry.path))?;
            Ok(SyntheticScene {
                image,
                label: entry.label,
                keypoints: entry.keypoints.iter().map(|&[r, c]| (r, c)).collect(),
            })
        })
        .collect()
}
