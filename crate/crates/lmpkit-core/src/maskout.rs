//! Attention mask-out: erase the most discriminative image region and fuse
//! the predictions of the original network and its replica.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusteringOutput, DistanceMetric};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape of the erased region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Disk,
    Square,
}

/// Region to remove from an image, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    /// (row, col) center in image pixels.
    pub center: (f64, f64),
    /// Half-extent in pixels; a square mask covers `2*radius + 1` pixels
    /// per side on an integer grid.
    pub radius: f64,
    pub mode: MaskMode,
}

/// Binary mask over the image: 0 inside the region, 1 elsewhere.
pub fn make_mask(spec: &MaskSpec, h_img: usize, w_img: usize) -> Tensor {
    debug_assert!(spec.radius > 0.0, "mask radius must be positive");
    let mut mask = Tensor::full(&[h_img, w_img], 1.0);
    let (cr, cc) = spec.center;
    for r in 0..h_img {
        for c in 0..w_img {
            let dr = r as f64 - cr;
            let dc = c as f64 - cc;
            let inside = match spec.mode {
                MaskMode::Disk => dr * dr + dc * dc <= spec.radius * spec.radius,
                MaskMode::Square => dr.abs() <= spec.radius && dc.abs() <= spec.radius,
            };
            if inside {
                mask.data_mut()[r * w_img + c] = 0.0;
            }
        }
    }
    mask
}

/// Multiplies every channel of `img` elementwise by `mask`.
pub fn apply_mask(img: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (ch, h, w) = img.dims3()?;
    if mask.shape() != [h, w] {
        return Err(Error::Size(format!(
            "mask shape {:?} does not match image spatial dims [{h}, {w}]",
            mask.shape()
        )));
    }
    let mut out = img.clone();
    let hw = h * w;
    for c in 0..ch {
        for (slot, &m) in out.data_mut()[c * hw..(c + 1) * hw]
            .iter_mut()
            .zip(mask.data())
        {
            *slot *= m;
        }
    }
    Ok(out)
}

/// Fuses the primary and replica predictions for one image.
///
/// Slot 1 is the primary network's first peak. Remaining slots interleave
/// replica peaks with the primary's later peaks, skipping any candidate
/// within `thr` grid cells of an already-accepted peak, until `k` peaks are
/// placed or candidates run out. The fused output carries each accepted
/// peak's source heatmap and the primary network's vote matrix.
pub fn fuse_predictions(
    primary: &ClusteringOutput,
    replica: &ClusteringOutput,
    k: usize,
    thr: f64,
    metric: DistanceMetric,
) -> ClusteringOutput {
    let (h, w) = (primary.heatmaps.shape()[1], primary.heatmaps.shape()[2]);
    debug_assert_eq!(
        &replica.heatmaps.shape()[1..],
        &[h, w],
        "fusion requires matching grids"
    );

    let heatmap_of = |out: &ClusteringOutput, i: usize| -> Vec<f64> {
        out.heatmaps.data()[i * h * w..(i + 1) * h * w].to_vec()
    };

    let mut peaks: Vec<(usize, usize)> = Vec::new();
    let mut heatmaps: Vec<f64> = Vec::new();
    let push = |peak: (usize, usize),
                    map: Vec<f64>,
                    peaks: &mut Vec<(usize, usize)>,
                    heatmaps: &mut Vec<f64>|
     -> bool {
        if peaks.len() >= k {
            return false;
        }
        if peaks.iter().all(|&p| metric.between(p, peak) >= thr) {
            peaks.push(peak);
            heatmaps.extend_from_slice(&map);
        }
        true
    };

    if let Some(&first) = primary.peaks.first() {
        push(first, heatmap_of(primary, 0), &mut peaks, &mut heatmaps);
    }
    let mut rep_iter = replica.peaks.iter().enumerate();
    let mut pri_iter = primary.peaks.iter().enumerate().skip(1);
    loop {
        if peaks.len() >= k {
            break;
        }
        let rep = rep_iter.next();
        let pri = pri_iter.next();
        if rep.is_none() && pri.is_none() {
            break;
        }
        if let Some((i, &p)) = rep {
            if !push(p, heatmap_of(replica, i), &mut peaks, &mut heatmaps) {
                break;
            }
        }
        if let Some((i, &p)) = pri {
            if !push(p, heatmap_of(primary, i), &mut peaks, &mut heatmaps) {
                break;
            }
        }
    }

    let emitted = peaks.len();
    ClusteringOutput {
        heatmaps: Tensor::from_vec(&[emitted, h, w], heatmaps)
            .expect("fused heatmap buffer matches emitted count"),
        peaks,
        votes: primary.votes.clone(),
    }
}
