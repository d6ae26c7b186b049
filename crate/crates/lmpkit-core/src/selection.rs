//! Per-image filter selection by activation strength.
//!
//! A channel's maximum activation is used as the confidence that its
//! underlying pattern is present; only the strongest channels per image are
//! kept as keypoint proposals.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How many channels to retain per image. Count and fraction are mutually
/// exclusive by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionConfig {
    KeepCount(usize),
    KeepFraction(f64),
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig::KeepFraction(0.25)
    }
}

impl SelectionConfig {
    /// Resolves the rule to a concrete channel count for `c` input channels.
    pub fn resolved_count(&self, c: usize) -> Result<usize> {
        match *self {
            SelectionConfig::KeepCount(k) => {
                if k == 0 || k > c {
                    Err(Error::Size(format!(
                        "keep_count {k} out of range for {c} channels"
                    )))
                } else {
                    Ok(k)
                }
            }
            SelectionConfig::KeepFraction(f) => {
                if !f.is_finite() || f <= 0.0 || f > 1.0 {
                    return Err(Error::Config(format!(
                        "keep_fraction must be in (0, 1], got {f}"
                    )));
                }
                let k = libm::round(c as f64 * f) as usize;
                Ok(k.clamp(1, c))
            }
        }
    }
}

/// Keeps the channels with the largest per-channel max activation.
///
/// Returns the retained channels in their original order together with
/// their original indices. Ties break toward the lower channel index.
pub fn select_filters(x: &Tensor, cfg: &SelectionConfig) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.dims3()?;
    let keep = cfg.resolved_count(c)?;
    let hw = h * w;

    let maxes: Vec<f64> = (0..c)
        .map(|ch| {
            x.data()[ch * hw..(ch + 1) * hw]
                .iter()
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        })
        .collect();

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| maxes[b].total_cmp(&maxes[a]).then(a.cmp(&b)));
    let mut indices: Vec<usize> = order[..keep].to_vec();
    indices.sort_unstable();

    let mut data = Vec::with_capacity(keep * hw);
    for &ch in &indices {
        data.extend_from_slice(&x.data()[ch * hw..(ch + 1) * hw]);
    }
    Ok((Tensor::from_vec(&[keep, h, w], data)?, indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(channel_maxes: &[f64]) -> Tensor {
        // 2x2 channels whose max sits at a fixed spot.
        let mut data = Vec::new();
        for &m in channel_maxes {
            data.extend_from_slice(&[m, m - 1.0, m - 1.0, m - 1.0]);
        }
        Tensor::from_vec(&[channel_maxes.len(), 2, 2], data).unwrap()
    }

    #[test]
    fn keeps_strongest_channels() {
        let x = stack(&[0.9, 0.1, 0.5]);
        let (_, idx) = select_filters(&x, &SelectionConfig::KeepCount(2)).unwrap();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn keep_all_is_identity() {
        let x = stack(&[0.3, 0.7, 0.5]);
        let (out, idx) = select_filters(&x, &SelectionConfig::KeepCount(3)).unwrap();
        assert_eq!(out, x);
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn ties_break_to_lower_index() {
        let x = stack(&[0.5, 0.5, 0.1]);
        let (_, idx) = select_filters(&x, &SelectionConfig::KeepCount(1)).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn keep_count_larger_than_channels_errors() {
        let x = stack(&[0.5, 0.5]);
        assert!(matches!(
            select_filters(&x, &SelectionConfig::KeepCount(3)),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn fraction_resolves_and_clamps() {
        assert_eq!(SelectionConfig::KeepFraction(0.25).resolved_count(32).unwrap(), 8);
        assert_eq!(SelectionConfig::KeepFraction(0.01).resolved_count(8).unwrap(), 1);
        assert_eq!(SelectionConfig::KeepFraction(1.0).resolved_count(5).unwrap(), 5);
        assert!(SelectionConfig::KeepFraction(0.0).resolved_count(5).is_err());
        assert!(SelectionConfig::KeepFraction(1.5).resolved_count(5).is_err());
    }

    #[test]
    fn selected_dominate_rejected_and_selection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..50 {
            let c = rng.gen_range(2..10);
            let mut data = Vec::new();
            for _ in 0..c * 4 {
                data.push(rng.gen_range(-1.0..1.0));
            }
            let x = Tensor::from_vec(&[c, 2, 2], data).unwrap();
            let keep = rng.gen_range(1..=c);
            let cfg = SelectionConfig::KeepCount(keep);
            let (out, idx) = select_filters(&x, &cfg).unwrap();
            assert_eq!(out.shape()[0], keep);
            assert!(idx.windows(2).all(|p| p[0] < p[1]), "order preserved");

            let ch_max = |t: &Tensor, ch: usize| -> f64 {
                t.data()[ch * 4..(ch + 1) * 4]
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
            };
            let min_kept = idx
                .iter()
                .map(|&ch| ch_max(&x, ch))
                .fold(f64::INFINITY, f64::min);
            let max_rejected = (0..c)
                .filter(|ch| !idx.contains(ch))
                .map(|ch| ch_max(&x, ch))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(min_kept >= max_rejected || idx.len() == c);

            let (again, idx2) = select_filters(&out, &SelectionConfig::KeepCount(keep)).unwrap();
            assert_eq!(again, out, "idempotent on already-selected stack");
            assert_eq!(idx2, (0..keep).collect::<Vec<_>>());
        }
    }
}
