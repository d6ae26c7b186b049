//! Evaluation metrics: feature-map entropy as a sparsity measure and
//! greedy-matching PCK for keypoint accuracy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SyntheticScene;
use crate::tensor::Tensor;
use crate::trainer::ToyModel;

const ENTROPY_GUARD: f64 = 1e-12;

/// Mean Shannon entropy of the L1-normalized nonnegative channel maps.
///
/// Channels with zero mass are skipped; if every channel is zero the volume
/// has no activation to measure and [`Error::EmptyActivation`] is returned.
/// Natural log, so the range is `[0, ln(h*w)]`.
pub fn feature_entropy(x: &Tensor) -> Result<f64> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let mut total = 0.0;
    let mut counted = 0usize;
    for ch in 0..c {
        let slice = &x.data()[ch * hw..(ch + 1) * hw];
        let mass: f64 = slice.iter().map(|&v| v.max(0.0)).sum();
        if mass == 0.0 {
            continue;
        }
        let denom = mass + hw as f64 * ENTROPY_GUARD;
        let mut entropy = 0.0;
        for &v in slice {
            let p = (v.max(0.0) + ENTROPY_GUARD) / denom;
            entropy -= p * libm::log(p);
        }
        total += entropy;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::EmptyActivation);
    }
    Ok(total / counted as f64)
}

/// One row of the entropy comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub label: String,
    pub mean_entropy: f64,
    pub std_entropy: f64,
    pub n_images: usize,
}

/// Mean feature entropy over a dataset for each labelled model.
///
/// Images whose final feature volume is entirely zero are skipped and do
/// not count toward `n_images`.
pub fn entropy_report(
    models: &[(&str, &ToyModel)],
    dataset: &[SyntheticScene],
) -> Result<Vec<EntropyRow>> {
    let mut rows = Vec::with_capacity(models.len());
    for &(label, model) in models {
        let mut samples = Vec::with_capacity(dataset.len());
        for scene in dataset {
            let feats = model.features(&scene.image)?;
            match feature_entropy(&feats) {
                Ok(e) => samples.push(e),
                Err(Error::EmptyActivation) => continue,
                Err(e) => return Err(e),
            }
        }
        let (mean, std) = mean_std(&samples);
        rows.push(EntropyRow {
            label: String::from(label),
            mean_entropy: mean,
            std_entropy: std,
            n_images: samples.len(),
        });
    }
    Ok(rows)
}

/// Population mean and standard deviation; (0, 0) for an empty slice.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Whether a matched ground-truth point stays available for later
/// predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    GtReusable,
    GtConsumed,
}

/// Greedy-PCK parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PckConfig {
    /// Fraction of the shorter image side used as the correctness radius.
    pub alpha: f64,
    pub match_mode: MatchMode,
}

impl Default for PckConfig {
    fn default() -> Self {
        PckConfig {
            alpha: 0.1,
            match_mode: MatchMode::GtConsumed,
        }
    }
}

impl PckConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            return Err(Error::Config(format!(
                "pck alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-keypoint and average accuracy in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PckReport {
    pub per_keypoint_acc: Vec<f64>,
    pub average: f64,
    pub n_images: usize,
}

/// Greedy-matching PCK over a set of images.
///
/// Predictions are processed in emission order; prediction `i` across
/// images forms keypoint column `i`. A prediction is correct when its
/// nearest available ground-truth point lies within
/// `alpha * min(h_img, w_img)`; in [`MatchMode::GtConsumed`] that point is
/// then removed from availability. Points are (row, col) pixel
/// coordinates.
pub fn greedy_pck(
    preds: &[Vec<(f64, f64)>],
    gts: &[Vec<(f64, f64)>],
    cfg: &PckConfig,
    image_sizes: &[(usize, usize)],
) -> Result<PckReport> {
    cfg.validate()?;
    if preds.len() != gts.len() || preds.len() != image_sizes.len() {
        return Err(Error::Size(format!(
            "greedy_pck: {} prediction lists, {} ground-truth lists, {} sizes",
            preds.len(),
            gts.len(),
            image_sizes.len()
        )));
    }
    let k = preds.iter().map(Vec::len).max().unwrap_or(0);
    let n_images = preds.len();
    let mut correct = vec![0usize; k];
    for ((pred, gt), &(h, w)) in preds.iter().zip(gts).zip(image_sizes) {
        let radius = cfg.alpha * h.min(w) as f64;
        let mut available = vec![true; gt.len()];
        for (slot, &(pr, pc)) in pred.iter().enumerate() {
            let mut nearest: Option<(usize, f64)> = None;
            for (j, &(gr, gc)) in gt.iter().enumerate() {
                if !available[j] {
                    continue;
                }
                let d = libm::sqrt((pr - gr) * (pr - gr) + (pc - gc) * (pc - gc));
                if nearest.is_none_or(|(_, best)| d < best) {
                    nearest = Some((j, d));
                }
            }
            if let Some((j, d)) = nearest {
                if d <= radius {
                    correct[slot] += 1;
                    if cfg.match_mode == MatchMode::GtConsumed {
                        available[j] = false;
                    }
                }
            }
        }
    }
    let per_keypoint_acc: Vec<f64> = correct
        .iter()
        .map(|&c| {
            if n_images == 0 {
                0.0
            } else {
                c as f64 / n_images as f64
            }
        })
        .collect();
    let average = if per_keypoint_acc.is_empty() {
        0.0
    } else {
        per_keypoint_acc.iter().sum::<f64>() / per_keypoint_acc.len() as f64
    };
    Ok(PckReport {
        per_keypoint_acc,
        average,
        n_images,
    })
}
