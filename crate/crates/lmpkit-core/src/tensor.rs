//! Dense row-major f64 tensors and the explicit forward/backward pairs the
//! rest of the crate is built from.
//!
//! There is no autodiff graph here: every layer exposes its own backward
//! function, which keeps gradient flow auditable layer by layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense tensor: a shape plus a flat row-major buffer of 64-bit floats.
///
/// Computation is always f64; the 32-bit representation exists only in the
/// on-disk tensor format.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching flat data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Size(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.debug_check_finite();
        Ok(t)
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Tensor with every element set to `value`.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Element at a full multi-index. Intended for tests and small code
    /// paths; hot loops index the flat buffer directly.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} ({dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Same data, new shape. Row-major order; the element count must match.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let expected: usize = new_shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Size(format!(
                "cannot reshape {:?} ({} elements) to {new_shape:?} ({expected} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// In debug builds, every public operation must leave tensors finite.
    pub(crate) fn debug_check_finite(&self) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "tensor contains NaN/Inf (shape {:?})",
            self.shape
        );
    }

    pub(crate) fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Size(format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub(crate) fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Size(format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    pub(crate) fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::Size(format!("expected rank 4, got {:?}", self.shape))),
        }
    }
}

/// A parameter tensor bundled with a gradient buffer of identical shape.
#[derive(Debug, Clone)]
pub struct GradPair {
    pub value: Tensor,
    pub grad: Tensor,
}

impl GradPair {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        GradPair { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.fill(0.0);
    }
}

/// out[i] = sum_j m[i,j] * v[j]
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (rows, cols) = m.dims2()?;
    if v.shape() != [cols] {
        return Err(Error::Size(format!(
            "matvec: matrix is {rows}x{cols} but vector has shape {:?}",
            v.shape()
        )));
    }
    let mut out = vec![0.0; rows];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m.data[i * cols..(i + 1) * cols];
        *o = row.iter().zip(&v.data).map(|(a, b)| a * b).sum();
    }
    let t = Tensor::from_vec(&[rows], out)?;
    t.debug_check_finite();
    Ok(t)
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(Error::Size(format!(
            "kernel extent {kernel} does not fit padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Valid output range along one spatial axis for a fixed kernel offset:
/// all `o` with `0 <= o*stride + k_off - pad < input`.
fn valid_out_range(
    out_dim: usize,
    input: usize,
    stride: usize,
    pad: usize,
    k_off: usize,
) -> (usize, usize) {
    let lo = pad.saturating_sub(k_off).div_ceil(stride);
    let hi = if input + pad > k_off {
        ((input - 1 + pad - k_off) / stride + 1).min(out_dim)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Direct cross-correlation. `x` is `[b, cin, h, w]`, `k` is
/// `[cout, cin, kh, kw]`; output spatial size is
/// `floor((dim + 2*pad - kdim)/stride) + 1`.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (batch, cin, h, w) = x.dims4()?;
    let (cout, kcin, kh, kw) = k.dims4()?;
    if kcin != cin {
        return Err(Error::Size(format!(
            "conv2d: input has {cin} channels, kernel expects {kcin}"
        )));
    }
    if stride == 0 {
        return Err(Error::Size("conv2d: stride must be >= 1".into()));
    }
    let hout = conv_out_dim(h, kh, stride, pad)?;
    let wout = conv_out_dim(w, kw, stride, pad)?;

    let mut out = Tensor::zeros(&[batch, cout, hout, wout]);
    let plane_in = h * w;
    let plane_out = hout * wout;
    for b in 0..batch {
        let x_img = &x.data[b * cin * plane_in..(b + 1) * cin * plane_in];
        let out_img = &mut out.data[b * cout * plane_out..(b + 1) * cout * plane_out];
        for co in 0..cout {
            let out_plane = &mut out_img[co * plane_out..(co + 1) * plane_out];
            for ci in 0..cin {
                let x_plane = &x_img[ci * plane_in..(ci + 1) * plane_in];
                let k_plane = &k.data[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_out_range(hout, h, stride, pad, ky);
                    for kx in 0..kw {
                        let weight = k_plane[ky * kw + kx];
                        let (ox_lo, ox_hi) = valid_out_range(wout, w, stride, pad, kx);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let row_in = &x_plane[iy * w..iy * w + w];
                            let row_out = &mut out_plane[oy * wout..oy * wout + wout];
                            let mut ix = ox_lo * stride + kx - pad;
                            for o in &mut row_out[ox_lo..ox_hi] {
                                *o += weight * row_in[ix];
                                ix += stride;
                            }
                        }
                    }
                }
            }
        }
    }
    out.debug_check_finite();
    Ok(out)
}

/// Analytic gradients of [`conv2d_forward`] with respect to the input and
/// the kernel.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let (batch, cin, h, w) = x.dims4()?;
    let (cout, kcin, kh, kw) = k.dims4()?;
    if kcin != cin {
        return Err(Error::Size(format!(
            "conv2d: input has {cin} channels, kernel expects {kcin}"
        )));
    }
    if stride == 0 {
        return Err(Error::Size("conv2d: stride must be >= 1".into()));
    }
    let hout = conv_out_dim(h, kh, stride, pad)?;
    let wout = conv_out_dim(w, kw, stride, pad)?;
    if grad_out.shape() != [batch, cout, hout, wout] {
        return Err(Error::Size(format!(
            "conv2d backward: grad_out shape {:?} does not match forward output \
             [{batch}, {cout}, {hout}, {wout}]",
            grad_out.shape()
        )));
    }

    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_k = Tensor::zeros(k.shape());
    let plane_in = h * w;
    let plane_out = hout * wout;
    for b in 0..batch {
        let x_img = &x.data[b * cin * plane_in..(b + 1) * cin * plane_in];
        let gx_img = &mut grad_x.data[b * cin * plane_in..(b + 1) * cin * plane_in];
        let go_img = &grad_out.data[b * cout * plane_out..(b + 1) * cout * plane_out];
        for co in 0..cout {
            let go_plane = &go_img[co * plane_out..(co + 1) * plane_out];
            for ci in 0..cin {
                let x_plane = &x_img[ci * plane_in..(ci + 1) * plane_in];
                let gx_plane = &mut gx_img[ci * plane_in..(ci + 1) * plane_in];
                let k_base = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_out_range(hout, h, stride, pad, ky);
                    for kx in 0..kw {
                        let weight = k.data[k_base + ky * kw + kx];
                        let (ox_lo, ox_hi) = valid_out_range(wout, w, stride, pad, kx);
                        let mut k_acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let row_x = &x_plane[iy * w..iy * w + w];
                            let row_gx = &mut gx_plane[iy * w..iy * w + w];
                            let row_go = &go_plane[oy * wout..oy * wout + wout];
                            let mut ix = ox_lo * stride + kx - pad;
                            for &g in &row_go[ox_lo..ox_hi] {
                                k_acc += g * row_x[ix];
                                row_gx[ix] += weight * g;
                                ix += stride;
                            }
                        }
                        grad_k.data[k_base + ky * kw + kx] += k_acc;
                    }
                }
            }
        }
    }
    grad_x.debug_check_finite();
    grad_k.debug_check_finite();
    Ok((grad_x, grad_k))
}

/// Elementwise max(x, 0).
pub fn relu_fwd(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| v.max(0.0)).collect();
    Tensor {
        shape: x.shape.clone(),
        data,
    }
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_bwd(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::Size(format!(
            "relu backward: input shape {:?} vs grad shape {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let data = x
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// out[b, o] = bias[o] + sum_j w[o, j] * x[b, j]
pub fn linear_fwd(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, n_in) = x.dims2()?;
    let (n_out, wn_in) = w.dims2()?;
    if wn_in != n_in || bias.shape() != [n_out] {
        return Err(Error::Size(format!(
            "linear: x {:?}, w {:?}, bias {:?} are inconsistent",
            x.shape(),
            w.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[batch, n_out]);
    for b in 0..batch {
        let xr = &x.data[b * n_in..(b + 1) * n_in];
        let or = &mut out.data[b * n_out..(b + 1) * n_out];
        for (o, slot) in or.iter_mut().enumerate() {
            let wr = &w.data[o * n_in..(o + 1) * n_in];
            let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
            *slot = bias.data[o] + dot;
        }
    }
    out.debug_check_finite();
    Ok(out)
}

/// Gradients of [`linear_fwd`]: returns (grad_x, grad_w, grad_bias).
pub fn linear_bwd(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, n_in) = x.dims2()?;
    let (n_out, wn_in) = w.dims2()?;
    if wn_in != n_in || grad_out.shape() != [batch, n_out] {
        return Err(Error::Size(format!(
            "linear backward: x {:?}, w {:?}, grad_out {:?} are inconsistent",
            x.shape(),
            w.shape(),
            grad_out.shape()
        )));
    }
    let mut grad_x = Tensor::zeros(&[batch, n_in]);
    let mut grad_w = Tensor::zeros(&[n_out, n_in]);
    let mut grad_b = Tensor::zeros(&[n_out]);
    for b in 0..batch {
        let xr = &x.data[b * n_in..(b + 1) * n_in];
        let gr = &grad_out.data[b * n_out..(b + 1) * n_out];
        let gxr = &mut grad_x.data[b * n_in..(b + 1) * n_in];
        for (o, &g) in gr.iter().enumerate() {
            grad_b.data[o] += g;
            let wr = &w.data[o * n_in..(o + 1) * n_in];
            let gwr = &mut grad_w.data[o * n_in..(o + 1) * n_in];
            for j in 0..n_in {
                gxr[j] += g * wr[j];
                gwr[j] += g * xr[j];
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

/// Mean cross-entropy over the batch with a numerically stable softmax.
/// Returns the loss and the cached probabilities `[batch, classes]`.
pub fn softmax_xent_fwd(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = logits.dims2()?;
    if labels.len() != batch {
        return Err(Error::Size(format!(
            "softmax: {batch} logit rows but {} labels",
            labels.len()
        )));
    }
    for &label in labels {
        if label >= classes {
            return Err(Error::Label {
                index: label,
                num_classes: classes,
            });
        }
    }
    let mut probs = Tensor::zeros(&[batch, classes]);
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &logits.data[b * classes..(b + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let out = &mut probs.data[b * classes..(b + 1) * classes];
        let mut denom = 0.0;
        for (slot, &v) in out.iter_mut().zip(row) {
            let e = libm::exp(v - max);
            *slot = e;
            denom += e;
        }
        for slot in out.iter_mut() {
            *slot /= denom;
        }
        loss -= libm::log(out[labels[b]]);
    }
    loss /= batch as f64;
    probs.debug_check_finite();
    Ok((loss, probs))
}

/// Gradient of the mean cross-entropy with respect to the logits:
/// `(p - onehot) / batch`.
pub fn softmax_xent_bwd(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (batch, classes) = probs.dims2()?;
    if labels.len() != batch {
        return Err(Error::Size(format!(
            "softmax backward: {batch} probability rows but {} labels",
            labels.len()
        )));
    }
    let mut grad = probs.clone();
    let scale = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label {
                index: label,
                num_classes: classes,
            });
        }
        let row = &mut grad.data[b * classes..(b + 1) * classes];
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(grad)
}
