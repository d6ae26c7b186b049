//! Generalized global pooling as a pooling-vector product.
//!
//! Every kind of global pooling used here is the inner product of a weight
//! vector with a flattened feature map. Average pooling weights every
//! location 1/hw, max pooling is a one-hot at the argmax, and leaky max
//! pooling keeps the 1 at the argmax but assigns -epsilon everywhere else,
//! so dense activations are penalized in both the output and the gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which pooling vector to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Average,
    Max,
    LeakyMax,
}

/// A pooling-vector specification. `epsilon` is only meaningful for
/// [`PoolKind::LeakyMax`] and is ignored otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolingKernel {
    kind: PoolKind,
    epsilon: f64,
}

/// Default non-maximum penalty, chosen for keypoint detection ability.
pub const DEFAULT_EPSILON: f64 = 0.1;

impl PoolingKernel {
    pub fn average() -> Self {
        PoolingKernel {
            kind: PoolKind::Average,
            epsilon: 0.0,
        }
    }

    pub fn max() -> Self {
        PoolingKernel {
            kind: PoolKind::Max,
            epsilon: 0.0,
        }
    }

    /// Leaky max pooling with the given non-maximum penalty.
    pub fn leaky_max(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "leaky max pooling requires epsilon > 0, got {epsilon}"
            )));
        }
        Ok(PoolingKernel {
            kind: PoolKind::LeakyMax,
            epsilon,
        })
    }

    /// Builds a kernel from a kind plus an epsilon that only LeakyMax uses.
    pub fn from_kind(kind: PoolKind, epsilon: f64) -> Result<Self> {
        match kind {
            PoolKind::Average => Ok(Self::average()),
            PoolKind::Max => Ok(Self::max()),
            PoolKind::LeakyMax => Self::leaky_max(epsilon),
        }
    }

    pub fn kind(&self) -> PoolKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Per-(batch, channel) argmax indices saved by the forward pass, consumed
/// by the backward pass.
#[derive(Debug, Clone)]
pub struct PoolingContext {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    argmax: Vec<usize>,
}

impl PoolingContext {
    /// Flat spatial argmax for one (batch, channel) row.
    pub fn argmax(&self, b: usize, c: usize) -> usize {
        self.argmax[b * self.channels + c]
    }

    pub fn spatial_size(&self) -> usize {
        self.height * self.width
    }
}

/// Index of the largest element; ties break to the lowest flat index.
pub(crate) fn argmax_flat(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Materializes the pooling vector for one flattened feature-map row.
pub fn make_pooling_vector(kernel: &PoolingKernel, x_flat: &Tensor) -> Result<Tensor> {
    let hw = x_flat.numel();
    if hw == 0 {
        return Err(Error::Size("pooling vector over empty input".into()));
    }
    if x_flat.shape().len() != 1 {
        return Err(Error::Size(format!(
            "pooling vector expects a flat row, got shape {:?}",
            x_flat.shape()
        )));
    }
    let data = match kernel.kind {
        PoolKind::Average => vec![1.0 / hw as f64; hw],
        PoolKind::Max => {
            let mut v = vec![0.0; hw];
            v[argmax_flat(x_flat.data())] = 1.0;
            v
        }
        PoolKind::LeakyMax => {
            let mut v = vec![-kernel.epsilon; hw];
            v[argmax_flat(x_flat.data())] = 1.0;
            v
        }
    };
    Tensor::from_vec(&[hw], data)
}

/// Global pooling of `[b, c, h, w]` down to `[b, c]`.
///
/// Equivalent to reshaping to `bc x hw` and multiplying each row by its own
/// pooling vector; implemented as one fused pass that also records the
/// argmax per row for the backward pass.
pub fn pool_forward(x: &Tensor, kernel: &PoolingKernel) -> Result<(Tensor, PoolingContext)> {
    let (batch, channels, height, width) = x.dims4()?;
    let hw = height * width;
    if hw == 0 {
        return Err(Error::Size("pooling over empty spatial dims".into()));
    }
    let mut out = Tensor::zeros(&[batch, channels]);
    let mut argmax = Vec::with_capacity(batch * channels);
    for row in 0..batch * channels {
        let slice = &x.data()[row * hw..(row + 1) * hw];
        let am = argmax_flat(slice);
        argmax.push(am);
        let sum: f64 = slice.iter().sum();
        out.data_mut()[row] = match kernel.kind {
            PoolKind::Average => sum / hw as f64,
            PoolKind::Max => slice[am],
            PoolKind::LeakyMax => slice[am] - kernel.epsilon * (sum - slice[am]),
        };
    }
    out.debug_check_finite();
    Ok((
        out,
        PoolingContext {
            batch,
            channels,
            height,
            width,
            argmax,
        },
    ))
}

/// Distributes `grad_out` back over the spatial grid.
///
/// Each location receives gradient proportional to its pooling-vector
/// weight; the argmax saved at forward time is treated as locally constant.
pub fn pool_backward(
    grad_out: &Tensor,
    ctx: &PoolingContext,
    kernel: &PoolingKernel,
) -> Result<Tensor> {
    if grad_out.shape() != [ctx.batch, ctx.channels] {
        return Err(Error::Context(format!(
            "pool backward: grad shape {:?} does not match context [{}, {}]",
            grad_out.shape(),
            ctx.batch,
            ctx.channels
        )));
    }
    let hw = ctx.spatial_size();
    let mut grad = Tensor::zeros(&[ctx.batch, ctx.channels, ctx.height, ctx.width]);
    for row in 0..ctx.batch * ctx.channels {
        let g = grad_out.data()[row];
        let slice = &mut grad.data_mut()[row * hw..(row + 1) * hw];
        match kernel.kind {
            PoolKind::Average => slice.fill(g / hw as f64),
            PoolKind::Max => slice[ctx.argmax[row]] = g,
            PoolKind::LeakyMax => {
                slice.fill(-kernel.epsilon * g);
                slice[ctx.argmax[row]] = g;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matvec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(data: &[f64]) -> Tensor {
        Tensor::from_vec(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn average_vector_is_uniform() {
        let v = make_pooling_vector(&PoolingKernel::average(), &row(&[0.0; 4])).unwrap();
        assert_eq!(v.data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn max_vector_is_one_hot_at_argmax() {
        let v = make_pooling_vector(&PoolingKernel::max(), &row(&[0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(v.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn leaky_vector_ties_break_to_first_index() {
        let kernel = PoolingKernel::leaky_max(0.1).unwrap();
        let v = make_pooling_vector(&kernel, &row(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert_eq!(v.data(), &[1.0, -0.1, -0.1, -0.1]);
    }

    #[test]
    fn empty_input_errors() {
        let kernel = PoolingKernel::average();
        assert!(make_pooling_vector(&kernel, &row(&[])).is_err());
    }

    #[test]
    fn leaky_max_requires_positive_epsilon() {
        assert!(PoolingKernel::leaky_max(0.0).is_err());
        assert!(PoolingKernel::leaky_max(-0.1).is_err());
        assert!(PoolingKernel::leaky_max(f64::NAN).is_err());
    }

    #[test]
    fn dense_and_sparse_toy_outputs() {
        let dense = Tensor::full(&[1, 1, 2, 2], 1.0);
        let mut sparse = Tensor::zeros(&[1, 1, 2, 2]);
        sparse.data_mut()[0] = 1.0;
        let lmp = PoolingKernel::leaky_max(0.1).unwrap();

        let cases = [
            (PoolingKernel::average(), 1.0, 0.25),
            (PoolingKernel::max(), 1.0, 1.0),
            (lmp, 0.7, 1.0),
        ];
        for (kernel, want_dense, want_sparse) in cases {
            let (out, _) = pool_forward(&dense, &kernel).unwrap();
            assert!(
                (out.data()[0] - want_dense).abs() < 1e-12,
                "{:?} dense: {} vs {want_dense}",
                kernel.kind(),
                out.data()[0]
            );
            let (out, _) = pool_forward(&sparse, &kernel).unwrap();
            assert!(
                (out.data()[0] - want_sparse).abs() < 1e-12,
                "{:?} sparse: {} vs {want_sparse}",
                kernel.kind(),
                out.data()[0]
            );
        }
    }

    #[test]
    fn all_zero_input_pools_to_zero() {
        let x = Tensor::zeros(&[2, 3, 2, 2]);
        for kernel in [
            PoolingKernel::average(),
            PoolingKernel::max(),
            PoolingKernel::leaky_max(0.1).unwrap(),
        ] {
            let (out, _) = pool_forward(&x, &kernel).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_places_kernel_weights() {
        let mut x = Tensor::zeros(&[1, 1, 2, 2]);
        x.data_mut()[2] = 3.0;
        let g = Tensor::full(&[1, 1], 1.0);

        let (_, ctx) = pool_forward(&x, &PoolingKernel::max()).unwrap();
        let grad = pool_backward(&g, &ctx, &PoolingKernel::max()).unwrap();
        assert_eq!(grad.data(), &[0.0, 0.0, 1.0, 0.0]);

        let lmp = PoolingKernel::leaky_max(0.1).unwrap();
        let mut x0 = Tensor::zeros(&[1, 1, 2, 2]);
        x0.data_mut()[0] = 2.0;
        let (_, ctx) = pool_forward(&x0, &lmp).unwrap();
        let grad = pool_backward(&g, &ctx, &lmp).unwrap();
        assert_eq!(grad.data(), &[1.0, -0.1, -0.1, -0.1]);

        let (_, ctx) = pool_forward(&x, &PoolingKernel::average()).unwrap();
        let grad = pool_backward(&g, &ctx, &PoolingKernel::average()).unwrap();
        assert_eq!(grad.data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn backward_rejects_mismatched_context() {
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let (_, ctx) = pool_forward(&x, &PoolingKernel::max()).unwrap();
        let g = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            pool_backward(&g, &ctx, &PoolingKernel::max()),
            Err(Error::Context(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let kernels = [
            PoolingKernel::average(),
            PoolingKernel::max(),
            PoolingKernel::leaky_max(0.1).unwrap(),
        ];
        for kernel in kernels {
            for _ in 0..20 {
                let mut x = Tensor::zeros(&[1, 2, 3, 3]);
                for v in x.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                // Build a clear margin so the argmax cannot move under h=1e-5.
                for row in 0..2 {
                    let slice = &mut x.data_mut()[row * 9..(row + 1) * 9];
                    let am = argmax_flat(slice);
                    slice[am] += 0.5;
                }
                let probe = {
                    let mut p = Tensor::zeros(&[1, 2]);
                    for v in p.data_mut() {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                    p
                };
                let objective = |x: &Tensor| -> f64 {
                    let (out, _) = pool_forward(x, &kernel).unwrap();
                    out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
                };
                let (_, ctx) = pool_forward(&x, &kernel).unwrap();
                let grad = pool_backward(&probe, &ctx, &kernel).unwrap();
                let h = 1e-5;
                for i in 0..x.numel() {
                    let mut xp = x.clone();
                    xp.data_mut()[i] += h;
                    let mut xm = x.clone();
                    xm.data_mut()[i] -= h;
                    let numeric = (objective(&xp) - objective(&xm)) / (2.0 * h);
                    let analytic = grad.data()[i];
                    let err = (analytic - numeric).abs()
                        / analytic.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        err < 1e-6,
                        "{:?} grad[{i}]: analytic {analytic} vs numeric {numeric}",
                        kernel.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn fused_forward_matches_per_row_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut x = Tensor::zeros(&[2, 3, 4, 4]);
        for v in x.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for kernel in [
            PoolingKernel::average(),
            PoolingKernel::max(),
            PoolingKernel::leaky_max(0.1).unwrap(),
        ] {
            let (fused, _) = pool_forward(&x, &kernel).unwrap();
            for row in 0..6 {
                let flat = Tensor::from_vec(&[16], x.data()[row * 16..(row + 1) * 16].to_vec())
                    .unwrap();
                let w = make_pooling_vector(&kernel, &flat).unwrap();
                let via_matvec = matvec(&w.reshape(&[1, 16]).unwrap(), &flat).unwrap();
                let diff = (fused.data()[row] - via_matvec.data()[0]).abs();
                assert!(diff < 1e-12, "row {row}: {diff}");
            }
        }
    }

    #[test]
    fn leaky_output_maximized_by_one_hot_on_discrete_simplex() {
        // All nonnegative 2x2 inputs with entries in steps of 0.05 summing to 1.
        let lmp = PoolingKernel::leaky_max(0.1).unwrap();
        let steps = 20usize;
        let mut best = f64::NEG_INFINITY;
        let mut best_is_one_hot = false;
        for a in 0..=steps {
            for b in 0..=steps - a {
                for c in 0..=steps - a - b {
                    let d = steps - a - b - c;
                    let vals = [a, b, c, d].map(|v| v as f64 / steps as f64);
                    let x = Tensor::from_vec(&[1, 1, 2, 2], vals.to_vec()).unwrap();
                    let (out, _) = pool_forward(&x, &lmp).unwrap();
                    let y = out.data()[0];
                    if y > best + 1e-15 {
                        best = y;
                        best_is_one_hot = vals.iter().filter(|&&v| v > 0.0).count() == 1;
                    }
                }
            }
        }
        assert!(best_is_one_hot, "max {best} not attained at a one-hot input");
        assert!((best - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pooling_vector_sums(values in proptest::collection::vec(-10.0f64..10.0, 1..32)) {
            let x = row(&values);
            let hw = values.len() as f64;
            let avg = make_pooling_vector(&PoolingKernel::average(), &x).unwrap();
            prop_assert!((avg.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let max = make_pooling_vector(&PoolingKernel::max(), &x).unwrap();
            prop_assert!((max.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let eps = 0.1;
            let lmp = make_pooling_vector(&PoolingKernel::leaky_max(eps).unwrap(), &x).unwrap();
            let want = 1.0 - (hw - 1.0) * eps;
            prop_assert!((lmp.data().iter().sum::<f64>() - want).abs() < 1e-12);
        }

        #[test]
        fn leaky_below_max_for_nonnegative_inputs(
            values in proptest::collection::vec(0.0f64..5.0, 4..20)
        ) {
            let hw = values.len();
            let x = Tensor::from_vec(&[1, 1, 1, hw], values.clone()).unwrap();
            let (max_out, _) = pool_forward(&x, &PoolingKernel::max()).unwrap();
            let (lmp_out, _) =
                pool_forward(&x, &PoolingKernel::leaky_max(0.1).unwrap()).unwrap();
            prop_assert!(lmp_out.data()[0] <= max_out.data()[0] + 1e-15);
            let am = argmax_flat(&values);
            let rest: f64 = values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != am)
                .map(|(_, v)| v)
                .sum();
            if rest == 0.0 {
                prop_assert!((lmp_out.data()[0] - max_out.data()[0]).abs() < 1e-15);
            } else {
                prop_assert!(lmp_out.data()[0] < max_out.data()[0]);
            }
        }
    }
}
