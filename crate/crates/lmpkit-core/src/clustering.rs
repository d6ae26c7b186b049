//! Greedy clustering of binarized keypoint proposals into keypoint
//! predictions.
//!
//! Each final-conv channel votes for a prediction heatmap through a
//! per-prediction weight column. The column is refined over a few
//! iterations: proposals whose peak lies close to the current prediction
//! peak receive more weight. After a prediction is emitted, all proposals
//! within the erase threshold of it are removed, and the process repeats
//! until k predictions exist or no proposals remain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::argmax_flat;
use crate::tensor::Tensor;

/// Grid distance used between peak positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    Manhattan,
}

impl DistanceMetric {
    pub fn between(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let dr = a.0 as f64 - b.0 as f64;
        let dc = a.1 as f64 - b.1 as f64;
        match self {
            DistanceMetric::Euclidean => libm::sqrt(dr * dr + dc * dc),
            DistanceMetric::Manhattan => dr.abs() + dc.abs(),
        }
    }
}

/// Parameters of the clustering layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Maximum number of predictions to emit.
    pub k: usize,
    /// Voting iterations per prediction.
    pub n: usize,
    /// Erase radius in feature-grid cells.
    pub thr: f64,
    /// Lower clamp for distances before taking 1/d.
    pub dist_floor: f64,
    pub metric: DistanceMetric,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k: 5,
            n: 3,
            thr: 3.0,
            dist_floor: 0.5,
            metric: DistanceMetric::Euclidean,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.n < 1 {
            return Err(Error::Config(format!(
                "clustering needs k >= 1 and n >= 1, got k={} n={}",
                self.k, self.n
            )));
        }
        if !self.thr.is_finite()
            || self.thr <= 0.0
            || !self.dist_floor.is_finite()
            || self.dist_floor <= 0.0
        {
            return Err(Error::Config(format!(
                "clustering needs thr > 0 and dist_floor > 0, got thr={} dist_floor={}",
                self.thr, self.dist_floor
            )));
        }
        Ok(())
    }
}

/// Result of one clustering pass over a single image.
#[derive(Debug, Clone)]
pub struct ClusteringOutput {
    /// Emitted prediction heatmaps, `[k', h, w]` with `k' <= k`.
    pub heatmaps: Tensor,
    /// Peak of each heatmap in (row, col) feature-grid coordinates.
    pub peaks: Vec<(usize, usize)>,
    /// Final weight matrix, `[c, k]`. Columns past `k'` keep their
    /// initialization; erased channels keep their last assigned weight.
    pub votes: Tensor,
}

impl ClusteringOutput {
    pub fn empty(c: usize, k: usize, h: usize, w: usize) -> Self {
        ClusteringOutput {
            heatmaps: Tensor::zeros(&[0, h, w]),
            peaks: Vec::new(),
            votes: Tensor::full(&[c, k], 1.0),
        }
    }
}

/// Reduces each channel to a one-hot map at its argmax.
///
/// Channels whose maximum is not strictly positive become all-zero and
/// carry no vote. Argmax ties break to the lowest flat index.
pub fn binarize_proposals(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let slice = &x.data()[ch * hw..(ch + 1) * hw];
        let am = argmax_flat(slice);
        if slice[am] > 0.0 {
            out.data_mut()[ch * hw + am] = 1.0;
        }
    }
    Ok(out)
}

/// Grid distance between the argmax of a prediction map and the argmax of
/// one proposal channel. All-zero channels are excluded from voting and
/// signal [`Error::ExcludedChannel`].
pub fn channel_peak_distance(y: &Tensor, x_ch: &Tensor, metric: DistanceMetric) -> Result<f64> {
    let (h, w) = y.dims2()?;
    if x_ch.shape() != [h, w] {
        return Err(Error::Size(format!(
            "peak distance: prediction {:?} vs channel {:?}",
            y.shape(),
            x_ch.shape()
        )));
    }
    if x_ch.data().iter().all(|&v| v == 0.0) {
        return Err(Error::ExcludedChannel);
    }
    let py = argmax_flat(y.data());
    let pe = argmax_flat(x_ch.data());
    Ok(metric.between((py / w, py % w), (pe / w, pe % w)))
}

/// Softmax of one weight column restricted to live channels.
fn column_softmax(w_mat: &[f64], k: usize, col: usize, alive: &[bool]) -> Vec<f64> {
    let c = alive.len();
    let mut max = f64::NEG_INFINITY;
    for ch in 0..c {
        if alive[ch] {
            max = max.max(w_mat[ch * k + col]);
        }
    }
    let mut weights = vec![0.0; c];
    let mut denom = 0.0;
    for ch in 0..c {
        if alive[ch] {
            let e = libm::exp(w_mat[ch * k + col] - max);
            weights[ch] = e;
            denom += e;
        }
    }
    for v in weights.iter_mut() {
        *v /= denom;
    }
    weights
}

/// Runs the full greedy clustering pass over one binarized proposal stack.
///
/// Input channels that are entirely zero never vote. After each emitted
/// prediction, channels whose last-iteration distance to the prediction is
/// below `thr` are permanently removed from later softmax columns.
pub fn cluster(x: &Tensor, cfg: &ClusteringConfig) -> Result<ClusteringOutput> {
    cfg.validate()?;
    let (c, h, w) = x.dims3()?;
    let hw = h * w;

    // Peak location per channel, fixed for the whole pass.
    let mut alive = vec![false; c];
    let mut ch_peak = vec![(0usize, 0usize); c];
    for ch in 0..c {
        let slice = &x.data()[ch * hw..(ch + 1) * hw];
        if slice.iter().any(|&v| v != 0.0) {
            alive[ch] = true;
            let am = argmax_flat(slice);
            ch_peak[ch] = (am / w, am % w);
        }
    }

    let mut w_mat = vec![1.0; c * cfg.k];
    let mut heatmaps = Vec::new();
    let mut peaks = Vec::new();

    for col in 0..cfg.k {
        if !alive.iter().any(|&a| a) {
            break;
        }
        let mut last_d = vec![f64::INFINITY; c];
        for _ in 0..cfg.n {
            let weights = column_softmax(&w_mat, cfg.k, col, &alive);
            let y = weighted_sum(x, &weights, &alive, hw);
            let y_am = argmax_flat(&y);
            let y_peak = (y_am / w, y_am % w);
            for ch in 0..c {
                if alive[ch] {
                    let d = cfg.metric.between(y_peak, ch_peak[ch]);
                    last_d[ch] = d;
                    w_mat[ch * cfg.k + col] = weights[ch] + 1.0 / d.max(cfg.dist_floor);
                }
            }
        }
        let weights = column_softmax(&w_mat, cfg.k, col, &alive);
        let y = weighted_sum(x, &weights, &alive, hw);
        let y_am = argmax_flat(&y);
        peaks.push((y_am / w, y_am % w));
        heatmaps.extend_from_slice(&y);

        for ch in 0..c {
            if alive[ch] && last_d[ch] < cfg.thr {
                alive[ch] = false;
            }
        }
    }

    let emitted = peaks.len();
    Ok(ClusteringOutput {
        heatmaps: Tensor::from_vec(&[emitted, h, w], heatmaps)?,
        peaks,
        votes: Tensor::from_vec(&[c, cfg.k], w_mat)?,
    })
}

fn weighted_sum(x: &Tensor, weights: &[f64], alive: &[bool], hw: usize) -> Vec<f64> {
    let mut y = vec![0.0; hw];
    for (ch, (&weight, &live)) in weights.iter().zip(alive).enumerate() {
        if live && weight != 0.0 {
            for (slot, &v) in y.iter_mut().zip(&x.data()[ch * hw..(ch + 1) * hw]) {
                *slot += weight * v;
            }
        }
    }
    y
}
