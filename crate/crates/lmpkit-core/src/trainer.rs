//! The end-to-end toy network: a small conv backbone, a global pooling
//! layer, and a linear classifier, trained with SGD momentum. Includes the
//! replica mask-out loop, the keypoint prediction pipeline, and analytic
//! FLOP accounting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::{binarize_proposals, cluster, ClusteringConfig};
use crate::error::{Error, Result};
use crate::maskout::{apply_mask, fuse_predictions, make_mask, MaskMode, MaskSpec};
use crate::pooling::{pool_backward, pool_forward, PoolKind, PoolingKernel};
use crate::selection::{select_filters, SelectionConfig};
use crate::synth::SyntheticScene;
use crate::tensor::{
    conv2d_backward, conv2d_forward, linear_bwd, linear_fwd, relu_bwd, relu_fwd, softmax_xent_bwd,
    softmax_xent_fwd, GradPair, Tensor,
};

/// One convolution layer of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Backbone for 32x32 grayscale inputs, ending in a 32-channel 8x8 grid.
pub fn default_backbone() -> Vec<ConvLayerSpec> {
    vec![
        ConvLayerSpec { cin: 1, cout: 16, kernel: 3, stride: 1, pad: 1 },
        ConvLayerSpec { cin: 16, cout: 32, kernel: 3, stride: 2, pad: 1 },
        ConvLayerSpec { cin: 32, cout: 32, kernel: 3, stride: 2, pad: 1 },
    ]
}

/// Converts a feature-grid index to the pixel coordinate of the cell
/// center. This is the documented affine map used everywhere a grid peak
/// becomes an image-space keypoint.
pub fn grid_to_pixel(index: usize, stride: usize) -> f64 {
    (index as f64 + 0.5) * stride as f64
}

/// Small convolutional classifier with explicit parameter tensors.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub conv_specs: Vec<ConvLayerSpec>,
    /// One bias-free kernel per conv layer, `[cout, cin, k, k]`.
    pub conv_kernels: Vec<GradPair>,
    /// Classifier weight `[num_classes, c]` over pooled features.
    pub fc_weight: GradPair,
    pub fc_bias: GradPair,
    pub pooling: PoolingKernel,
    pub num_classes: usize,
}

struct ForwardPass {
    /// Post-ReLU activations; index 0 is the input batch.
    post: Vec<Tensor>,
    /// Pre-ReLU conv outputs, one per layer.
    pre: Vec<Tensor>,
    pooled: Tensor,
    pool_ctx: crate::pooling::PoolingContext,
    probs: Tensor,
    loss: f64,
}

impl ToyModel {
    /// Initializes parameters from the given RNG (He-style normal scaling
    /// for kernels, smaller normal for the classifier, zero bias).
    pub fn init(
        specs: &[ConvLayerSpec],
        num_classes: usize,
        pooling: PoolingKernel,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::init_scaled(specs, num_classes, pooling, rng, 1.0)
    }

    /// Like [`ToyModel::init`] with every parameter multiplied by
    /// `init_scale`. Small scales make the initial feature maps nearly
    /// flat, so the spatial structure of the trained features comes from
    /// the pooling layer's gradient distribution rather than from the
    /// random init.
    pub fn init_scaled(
        specs: &[ConvLayerSpec],
        num_classes: usize,
        pooling: PoolingKernel,
        rng: &mut ChaCha8Rng,
        init_scale: f64,
    ) -> Self {
        let mut conv_kernels = Vec::with_capacity(specs.len());
        for s in specs {
            let fan_in = (s.cin * s.kernel * s.kernel) as f64;
            let scale = init_scale * libm::sqrt(2.0 / fan_in);
            let n = s.cout * s.cin * s.kernel * s.kernel;
            let data: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect();
            conv_kernels.push(GradPair::new(
                Tensor::from_vec(&[s.cout, s.cin, s.kernel, s.kernel], data)
                    .expect("kernel shape matches data"),
            ));
        }
        let c = specs.last().expect("at least one conv layer").cout;
        let scale = init_scale * libm::sqrt(1.0 / c as f64);
        let fc_data: Vec<f64> = (0..num_classes * c)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        ToyModel {
            conv_specs: specs.to_vec(),
            conv_kernels,
            fc_weight: GradPair::new(
                Tensor::from_vec(&[num_classes, c], fc_data).expect("fc shape matches data"),
            ),
            fc_bias: GradPair::new(Tensor::zeros(&[num_classes])),
            pooling,
            num_classes,
        }
    }

    /// Model with parameters drawn from a bare seed.
    pub fn seeded(
        specs: &[ConvLayerSpec],
        num_classes: usize,
        pooling: PoolingKernel,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(specs, num_classes, pooling, &mut rng)
    }

    pub fn feature_channels(&self) -> usize {
        self.conv_specs.last().map(|s| s.cout).unwrap_or(0)
    }

    /// Total spatial downsampling factor of the backbone.
    pub fn feature_stride(&self) -> usize {
        self.conv_specs.iter().map(|s| s.stride).product()
    }

    fn forward_convs(&self, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let mut post = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.conv_specs.len());
        for (spec, kernel) in self.conv_specs.iter().zip(&self.conv_kernels) {
            let z = conv2d_forward(post.last().unwrap(), &kernel.value, spec.stride, spec.pad)?;
            post.push(relu_fwd(&z));
            pre.push(z);
        }
        Ok((post, pre))
    }

    /// Classifier logits for a batch `[b, 1, h, w]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (post, _) = self.forward_convs(x)?;
        let (pooled, _) = pool_forward(post.last().unwrap(), &self.pooling)?;
        linear_fwd(&pooled, &self.fc_weight.value, &self.fc_bias.value)
    }

    /// Final conv-layer feature volume `[c, hf, wf]` for one `[1, h, w]`
    /// image.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let (_, h, w) = image.dims3()?;
        let batch = image.reshape(&[1, 1, h, w])?;
        let (post, _) = self.forward_convs(&batch)?;
        let feats = post.last().unwrap();
        let (_, c, hf, wf) = feats.dims4()?;
        feats.reshape(&[c, hf, wf])
    }

    fn forward_loss(&self, x: &Tensor, labels: &[usize]) -> Result<ForwardPass> {
        let (post, pre) = self.forward_convs(x)?;
        let (pooled, pool_ctx) = pool_forward(post.last().unwrap(), &self.pooling)?;
        let logits = linear_fwd(&pooled, &self.fc_weight.value, &self.fc_bias.value)?;
        let (loss, probs) = softmax_xent_fwd(&logits, labels)?;
        Ok(ForwardPass {
            post,
            pre,
            pooled,
            pool_ctx,
            probs,
            loss,
        })
    }

    /// Accumulates parameter gradients for one forward pass.
    fn backward(&mut self, fwd: &ForwardPass, labels: &[usize]) -> Result<()> {
        let grad_logits = softmax_xent_bwd(&fwd.probs, labels)?;
        let (grad_pooled, grad_fc_w, grad_fc_b) =
            linear_bwd(&fwd.pooled, &self.fc_weight.value, &grad_logits)?;
        add_into(&mut self.fc_weight.grad, &grad_fc_w);
        add_into(&mut self.fc_bias.grad, &grad_fc_b);

        let mut grad = pool_backward(&grad_pooled, &fwd.pool_ctx, &self.pooling)?;
        for i in (0..self.conv_specs.len()).rev() {
            let spec = self.conv_specs[i];
            let masked = relu_bwd(&fwd.pre[i], &grad)?;
            let (grad_x, grad_k) = conv2d_backward(
                &fwd.post[i],
                &self.conv_kernels[i].value,
                &masked,
                spec.stride,
                spec.pad,
            )?;
            add_into(&mut self.conv_kernels[i].grad, &grad_k);
            grad = grad_x;
        }
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut GradPair> {
        let mut params: Vec<&mut GradPair> = self.conv_kernels.iter_mut().collect();
        params.push(&mut self.fc_weight);
        params.push(&mut self.fc_bias);
        params
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

fn add_into(acc: &mut Tensor, delta: &Tensor) {
    debug_assert_eq!(acc.shape(), delta.shape());
    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Non-maximum penalty used when `pooling_kind` is LeakyMax.
    pub epsilon: f64,
    /// Multiplier on the parameter initialization scale.
    pub init_scale: f64,
    pub seed: u64,
    pub pooling_kind: PoolKind,
    pub enable_maskout: bool,
    pub selection: SelectionConfig,
    pub clustering: ClusteringConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            epsilon: crate::pooling::DEFAULT_EPSILON,
            init_scale: 1.0,
            seed: 0,
            pooling_kind: PoolKind::LeakyMax,
            enable_maskout: false,
            selection: SelectionConfig::default(),
            clustering: ClusteringConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        // learning_rate 0 is allowed so a no-op run stays expressible.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be a finite nonnegative number, got {}",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.init_scale.is_finite() || self.init_scale <= 0.0 {
            return Err(Error::Config(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        self.clustering.validate()?;
        self.pooling_kernel().map(|_| ())
    }

    pub fn pooling_kernel(&self) -> Result<PoolingKernel> {
        PoolingKernel::from_kind(self.pooling_kind, self.epsilon)
    }
}

/// Which network a history row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetId {
    Primary,
    Replica,
}

impl NetId {
    pub fn as_str(&self) -> &'static str {
        match self {
            NetId::Primary => "primary",
            NetId::Replica => "replica",
        }
    }
}

/// Per-epoch training loss and accuracy for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub net: NetId,
    pub loss: f64,
    pub accuracy: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub primary: ToyModel,
    pub replica: Option<ToyModel>,
    pub history: Vec<EpochStats>,
}

struct SgdState {
    velocity: Vec<Tensor>,
}

impl SgdState {
    fn new(model: &mut ToyModel) -> Self {
        let velocity = model
            .params_mut()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        SgdState { velocity }
    }

    fn step(&mut self, model: &mut ToyModel, lr: f64, momentum: f64) {
        for (param, vel) in model.params_mut().into_iter().zip(&mut self.velocity) {
            for ((v, g), p) in vel
                .data_mut()
                .iter_mut()
                .zip(param.grad.data())
                .zip(param.value.data_mut())
            {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

fn stack_batch(scenes: &[&SyntheticScene]) -> Result<(Tensor, Vec<usize>)> {
    let (_, h, w) = scenes[0].image.dims3()?;
    let mut data = Vec::with_capacity(scenes.len() * h * w);
    let mut labels = Vec::with_capacity(scenes.len());
    for scene in scenes {
        if scene.image.shape() != [1, h, w] {
            return Err(Error::Size("dataset images have mixed shapes".into()));
        }
        data.extend_from_slice(scene.image.data());
        labels.push(scene.label);
    }
    Ok((Tensor::from_vec(&[scenes.len(), 1, h, w], data)?, labels))
}

struct StepOutcome {
    loss_sum: f64,
    correct: usize,
    features: Tensor,
}

fn train_step(
    model: &mut ToyModel,
    sgd: &mut SgdState,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepOutcome> {
    model.zero_grads();
    let fwd = model.forward_loss(x, labels)?;
    if !fwd.loss.is_finite() {
        return Err(Error::Diverged { step });
    }
    let correct = count_correct(&fwd.probs, labels);
    model.backward(&fwd, labels)?;
    sgd.step(model, cfg.learning_rate, cfg.momentum);
    Ok(StepOutcome {
        loss_sum: fwd.loss * labels.len() as f64,
        correct,
        features: fwd.post.into_iter().last().unwrap(),
    })
}

fn count_correct(probs: &Tensor, labels: &[usize]) -> usize {
    let (_, classes) = probs.dims2().expect("probs are rank 2");
    let mut correct = 0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &probs.data()[b * classes..(b + 1) * classes];
        if crate::pooling::argmax_flat(row) == label {
            correct += 1;
        }
    }
    correct
}

/// Fraction of scenes the model classifies correctly.
pub fn accuracy(model: &ToyModel, scenes: &[SyntheticScene]) -> Result<f64> {
    if scenes.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for chunk in scenes.chunks(64) {
        let refs: Vec<&SyntheticScene> = chunk.iter().collect();
        let (x, labels) = stack_batch(&refs)?;
        let logits = model.logits(&x)?;
        correct += count_correct(&logits, &labels);
    }
    Ok(correct as f64 / scenes.len() as f64)
}

/// Builds the mask-out batch: each image is blanked around the primary
/// network's first predicted keypoint. Images without a prediction pass
/// through unmasked.
fn masked_batch(
    cfg: &TrainConfig,
    features: &Tensor,
    x: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let (batch, c, hf, wf) = features.dims4()?;
    let (_, _, h, w) = x.dims4()?;
    let first_only = ClusteringConfig { k: 1, ..cfg.clustering };
    let mut out = x.clone();
    let feat_plane = c * hf * wf;
    for b in 0..batch {
        let feats = Tensor::from_vec(
            &[c, hf, wf],
            features.data()[b * feat_plane..(b + 1) * feat_plane].to_vec(),
        )?;
        let (selected, _) = select_filters(&feats, &cfg.selection)?;
        let proposals = binarize_proposals(&selected)?;
        let clustered = cluster(&proposals, &first_only)?;
        if let Some(&(r, col)) = clustered.peaks.first() {
            let spec = MaskSpec {
                center: (grid_to_pixel(r, stride), grid_to_pixel(col, stride)),
                radius: stride as f64,
                mode: MaskMode::Square,
            };
            let mask = make_mask(&spec, h, w);
            let img = Tensor::from_vec(&[1, h, w], x.data()[b * h * w..(b + 1) * h * w].to_vec())?;
            let masked = apply_mask(&img, &mask)?;
            out.data_mut()[b * h * w..(b + 1) * h * w].copy_from_slice(masked.data());
        }
    }
    Ok(out)
}

/// SGD-with-momentum training of the primary network, plus the replica
/// network on mask-out batches when enabled. Fully deterministic for a
/// given config: data order, parameter init, and every update are derived
/// from `cfg.seed`.
pub fn train(cfg: &TrainConfig, dataset: &[SyntheticScene]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Size("training dataset is empty".into()));
    }
    let num_classes = dataset.iter().map(|s| s.label).max().unwrap() + 1;
    let kernel = cfg.pooling_kernel()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(0);
    let mut primary = ToyModel::init_scaled(
        &default_backbone(),
        num_classes,
        kernel,
        &mut init_rng,
        cfg.init_scale,
    );
    let mut replica = if cfg.enable_maskout {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Some(ToyModel::init_scaled(
            &default_backbone(),
            num_classes,
            kernel,
            &mut rng,
            cfg.init_scale,
        ))
    } else {
        None
    };

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(2);

    let mut primary_sgd = SgdState::new(&mut primary);
    let mut replica_sgd = replica.as_mut().map(SgdState::new);
    let stride = primary.feature_stride();

    let mut history = Vec::new();
    let mut step = 0usize;
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut order_rng);
        let mut primary_loss = 0.0;
        let mut primary_correct = 0usize;
        let mut replica_loss = 0.0;
        let mut replica_correct = 0usize;
        // The replica starts once the primary's first prediction is
        // meaningful enough to drive masking.
        let train_replica = cfg.enable_maskout && epoch >= 2;
        for batch_idx in indices.chunks(cfg.batch_size) {
            let scenes: Vec<&SyntheticScene> = batch_idx.iter().map(|&i| &dataset[i]).collect();
            let (x, labels) = stack_batch(&scenes)?;
            step += 1;
            let outcome = train_step(&mut primary, &mut primary_sgd, &x, &labels, cfg, step)?;
            primary_loss += outcome.loss_sum;
            primary_correct += outcome.correct;

            if train_replica {
                // Masks come from the primary forward already computed for
                // this batch (its pre-update features).
                let masked = masked_batch(cfg, &outcome.features, &x, stride)?;
                let replica = replica.as_mut().unwrap();
                let sgd = replica_sgd.as_mut().unwrap();
                step += 1;
                let rep = train_step(replica, sgd, &masked, &labels, cfg, step)?;
                replica_loss += rep.loss_sum;
                replica_correct += rep.correct;
            }
        }
        history.push(EpochStats {
            epoch,
            net: NetId::Primary,
            loss: primary_loss / n as f64,
            accuracy: primary_correct as f64 / n as f64,
        });
        if train_replica {
            history.push(EpochStats {
                epoch,
                net: NetId::Replica,
                loss: replica_loss / n as f64,
                accuracy: replica_correct as f64 / n as f64,
            });
        }
    }

    Ok(TrainOutcome {
        primary,
        replica,
        history,
    })
}

/// Full keypoint prediction pipeline for one `[1, h, w]` image: final-conv
/// features -> selection -> binarization -> clustering, fused with the
/// replica network's predictions on the masked image when one is present.
/// Returns (row, col) pixel coordinates.
pub fn predict_keypoints(
    model: &ToyModel,
    replica: Option<&ToyModel>,
    image: &Tensor,
    selection: &SelectionConfig,
    clustering: &ClusteringConfig,
) -> Result<Vec<(f64, f64)>> {
    let stride = model.feature_stride();
    let run = |net: &ToyModel, img: &Tensor| -> Result<crate::clustering::ClusteringOutput> {
        let feats = net.features(img)?;
        let (selected, _) = select_filters(&feats, selection)?;
        let proposals = binarize_proposals(&selected)?;
        cluster(&proposals, clustering)
    };
    let primary_out = run(model, image)?;
    let peaks = match replica {
        None => primary_out.peaks.clone(),
        Some(rep) => {
            let (_, h, w) = image.dims3()?;
            let masked = match primary_out.peaks.first() {
                Some(&(r, c)) => {
                    let spec = MaskSpec {
                        center: (grid_to_pixel(r, stride), grid_to_pixel(c, stride)),
                        radius: stride as f64,
                        mode: MaskMode::Square,
                    };
                    apply_mask(image, &make_mask(&spec, h, w))?
                }
                // No primary prediction to erase; the replica sees the
                // original image.
                None => image.clone(),
            };
            let replica_out = run(rep, &masked)?;
            fuse_predictions(
                &primary_out,
                &replica_out,
                clustering.k,
                clustering.thr,
                clustering.metric,
            )
            .peaks
        }
    };
    Ok(peaks
        .into_iter()
        .map(|(r, c)| (grid_to_pixel(r, stride), grid_to_pixel(c, stride)))
        .collect())
}

/// Multiply-add count for one named layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub name: String,
    pub macs: u64,
}

/// Analytic per-image multiply-add counts for every layer of a model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub per_layer: Vec<LayerFlops>,
    pub total_macs: u64,
    /// Pooling matvec multiply-adds divided by the total forward count.
    pub pooling_overhead_fraction: f64,
}

/// Counts multiply-adds for a single image of the given spatial size.
/// Convolutions count `cout*hout*wout*cin*k*k`, the pooling matvec counts
/// `c*h*w`, and the classifier counts `classes*c`; ReLU contributes none.
pub fn count_flops(model: &ToyModel, input_size: (usize, usize)) -> Result<FlopReport> {
    let (mut h, mut w) = input_size;
    let mut per_layer = Vec::new();
    for (i, spec) in model.conv_specs.iter().enumerate() {
        let padded_h = h + 2 * spec.pad;
        let padded_w = w + 2 * spec.pad;
        if spec.kernel > padded_h || spec.kernel > padded_w {
            return Err(Error::Size(format!(
                "conv{} kernel does not fit its {h}x{w} input",
                i + 1
            )));
        }
        let hout = (padded_h - spec.kernel) / spec.stride + 1;
        let wout = (padded_w - spec.kernel) / spec.stride + 1;
        let macs =
            (spec.cout * hout * wout * spec.cin * spec.kernel * spec.kernel) as u64;
        per_layer.push(LayerFlops {
            name: format!("conv{}", i + 1),
            macs,
        });
        h = hout;
        w = wout;
    }
    let c = model.feature_channels();
    let pooling_macs = (c * h * w) as u64;
    per_layer.push(LayerFlops {
        name: String::from("pooling"),
        macs: pooling_macs,
    });
    per_layer.push(LayerFlops {
        name: String::from("classifier"),
        macs: (model.num_classes * c) as u64,
    });
    let total_macs: u64 = per_layer.iter().map(|l| l.macs).sum();
    Ok(FlopReport {
        per_layer,
        total_macs,
        pooling_overhead_fraction: pooling_macs as f64 / total_macs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SceneSpec};

    fn tiny_dataset(n_per_class: usize) -> Vec<SyntheticScene> {
        let spec = SceneSpec::default();
        generate_dataset(&spec, n_per_class, 1, 42).unwrap().0
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    fn params_of(model: &ToyModel) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = model
            .conv_kernels
            .iter()
            .map(|p| p.value.data().to_vec())
            .collect();
        out.push(model.fc_weight.value.data().to_vec());
        out.push(model.fc_bias.value.data().to_vec());
        out
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = tiny_dataset(2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..quick_cfg()
        };
        let out = train(&cfg, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        let fresh = ToyModel::init_scaled(
            &default_backbone(),
            4,
            cfg.pooling_kernel().unwrap(),
            &mut rng,
            cfg.init_scale,
        );
        assert_eq!(params_of(&out.primary), params_of(&fresh));
    }

    #[test]
    fn single_sample_overfits_with_average_pooling() {
        let data = vec![tiny_dataset(1)[0].clone()];
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            pooling_kind: PoolKind::Average,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &data).unwrap();
        let last = out.history.last().unwrap();
        assert!(last.loss < 0.01, "memorization failed: loss {}", last.loss);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = tiny_dataset(3);
        let cfg = TrainConfig {
            enable_maskout: true,
            epochs: 3,
            ..quick_cfg()
        };
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(params_of(&a.primary), params_of(&b.primary));
        assert_eq!(
            params_of(a.replica.as_ref().unwrap()),
            params_of(b.replica.as_ref().unwrap())
        );
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn replica_training_never_touches_primary_parameters() {
        let data = tiny_dataset(3);
        let base = TrainConfig {
            epochs: 3,
            ..quick_cfg()
        };
        let with_replica = TrainConfig {
            enable_maskout: true,
            ..base.clone()
        };
        let a = train(&base, &data).unwrap();
        let b = train(&with_replica, &data).unwrap();
        assert_eq!(params_of(&a.primary), params_of(&b.primary));
        assert!(a.replica.is_none());
        assert!(b.replica.is_some());
    }

    #[test]
    fn replica_history_starts_at_second_epoch() {
        let data = tiny_dataset(2);
        let cfg = TrainConfig {
            enable_maskout: true,
            epochs: 3,
            ..quick_cfg()
        };
        let out = train(&cfg, &data).unwrap();
        let replica_epochs: Vec<usize> = out
            .history
            .iter()
            .filter(|r| r.net == NetId::Replica)
            .map(|r| r.epoch)
            .collect();
        assert_eq!(replica_epochs, vec![2, 3]);
    }

    #[test]
    fn zero_weights_predict_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ToyModel::init(
            &default_backbone(),
            4,
            PoolingKernel::leaky_max(0.1).unwrap(),
            &mut rng,
        );
        for k in &mut model.conv_kernels {
            k.value.data_mut().fill(0.0);
        }
        let image = Tensor::zeros(&[1, 32, 32]);
        let peaks = predict_keypoints(
            &model,
            None,
            &image,
            &SelectionConfig::default(),
            &ClusteringConfig::default(),
        )
        .unwrap();
        assert!(peaks.is_empty());
    }

    #[test]
    fn matched_filter_finds_planted_glyph() {
        use crate::synth::{generate_scene, GLYPHS};
        // Plant the ring glyph (inventory slot 4): unlike the diagonal
        // cross, its autocorrelation stays positive under the sub-stride
        // shifts a stride-4 grid can impose.
        let ring = 4usize;
        let spec = SceneSpec {
            num_classes: 5,
            unique_patterns_per_class: 1,
            num_unique_per_image: 1,
            num_repeated_distractors: 0,
            num_repeated_glyphs: 0,
            noise_sigma: 0.0,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec, ring, 11).unwrap();
        // One conv layer whose kernel is the glyph itself: a matched
        // filter with an 8x8 output grid and stride 4.
        let arch = [ConvLayerSpec { cin: 1, cout: 1, kernel: 5, stride: 4, pad: 2 }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model =
            ToyModel::init(&arch, 1, PoolingKernel::leaky_max(0.1).unwrap(), &mut rng);
        for (slot, &v) in model.conv_kernels[0]
            .value
            .data_mut()
            .iter_mut()
            .zip(GLYPHS[ring].iter().flatten())
        {
            *slot = f64::from(v);
        }
        let peaks = predict_keypoints(
            &model,
            None,
            &scene.image,
            &SelectionConfig::KeepCount(1),
            &ClusteringConfig { k: 1, ..ClusteringConfig::default() },
        )
        .unwrap();
        assert_eq!(peaks.len(), 1);
        let (r, c) = peaks[0];
        let (gr, gc) = scene.keypoints[0];
        let stride = model.feature_stride() as f64;
        assert!(
            (r - gr as f64).abs() <= stride && (c - gc as f64).abs() <= stride,
            "prediction ({r}, {c}) too far from glyph center ({gr}, {gc})"
        );
    }

    #[test]
    fn prediction_count_never_exceeds_k() {
        let data = tiny_dataset(1);
        let cfg = TrainConfig {
            epochs: 1,
            ..quick_cfg()
        };
        let out = train(&cfg, &data).unwrap();
        for scene in &data {
            let peaks = predict_keypoints(
                &out.primary,
                None,
                &scene.image,
                &cfg.selection,
                &cfg.clustering,
            )
            .unwrap();
            assert!(peaks.len() <= cfg.clustering.k);
        }
    }

    #[test]
    fn flop_counts_match_hand_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let single = [ConvLayerSpec { cin: 1, cout: 1, kernel: 3, stride: 1, pad: 0 }];
        let model = ToyModel::init(&single, 2, PoolingKernel::average(), &mut rng);
        let report = count_flops(&model, (10, 10)).unwrap();
        assert_eq!(report.per_layer[0].macs, 576); // 8*8 output, 9 taps

        let model = ToyModel::init(
            &default_backbone(),
            4,
            PoolingKernel::leaky_max(0.1).unwrap(),
            &mut rng,
        );
        let report = count_flops(&model, (32, 32)).unwrap();
        let by_name: Vec<(&str, u64)> = report
            .per_layer
            .iter()
            .map(|l| (l.name.as_str(), l.macs))
            .collect();
        assert_eq!(
            by_name,
            vec![
                ("conv1", 147_456),
                ("conv2", 1_179_648),
                ("conv3", 589_824),
                ("pooling", 2_048),
                ("classifier", 128),
            ]
        );
        assert_eq!(report.total_macs, 1_919_104);
        let want = 2048.0 / 1_919_104.0;
        assert!((report.pooling_overhead_fraction - want).abs() < 1e-15);
        assert!(report.pooling_overhead_fraction < 0.01);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn composed_model_passes_end_to_end_gradient_check() {
        let arch = [
            ConvLayerSpec { cin: 1, cout: 2, kernel: 3, stride: 1, pad: 1 },
            ConvLayerSpec { cin: 2, cout: 3, kernel: 3, stride: 2, pad: 1 },
        ];
        let labels = [1usize, 0];
        for kernel in [
            PoolingKernel::average(),
            PoolingKernel::max(),
            PoolingKernel::leaky_max(0.1).unwrap(),
        ] {
            // Pick a seed whose feature argmaxes are comfortably unique so
            // the subgradient is valid under the probe step.
            let mut chosen = None;
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let model = ToyModel::init(&arch, 2, kernel, &mut rng);
                let mut xr = ChaCha8Rng::seed_from_u64(seed + 100);
                let mut x = Tensor::zeros(&[2, 1, 6, 6]);
                for v in x.data_mut() {
                    *v = xr.gen_range(-1.0..1.0);
                }
                let (post, _) = model.forward_convs(&x).unwrap();
                let feats = post.last().unwrap();
                let (b, c, hf, wf) = feats.dims4().unwrap();
                let hw = hf * wf;
                let margin_ok = (0..b * c).all(|row| {
                    let slice = &feats.data()[row * hw..(row + 1) * hw];
                    let am = crate::pooling::argmax_flat(slice);
                    slice
                        .iter()
                        .enumerate()
                        .all(|(i, &v)| i == am || slice[am] - v > 1e-3)
                });
                if margin_ok {
                    chosen = Some((model, x));
                    break;
                }
            }
            let (mut model, x) = chosen.expect("found a non-tie configuration");

            let loss_of = |m: &ToyModel| m.forward_loss(&x, &labels).unwrap().loss;
            model.zero_grads();
            let fwd = model.forward_loss(&x, &labels).unwrap();
            model.backward(&fwd, &labels).unwrap();

            let h = 1e-5;
            let grads: Vec<Vec<f64>> = {
                let mut g: Vec<Vec<f64>> = model
                    .conv_kernels
                    .iter()
                    .map(|p| p.grad.data().to_vec())
                    .collect();
                g.push(model.fc_weight.grad.data().to_vec());
                g.push(model.fc_bias.grad.data().to_vec());
                g
            };
            let n_params = grads.len();
            for pi in 0..n_params {
                for i in 0..grads[pi].len() {
                    let nudge = |m: &mut ToyModel, delta: f64| {
                        let mut params = m.params_mut();
                        params[pi].value.data_mut()[i] += delta;
                    };
                    nudge(&mut model, h);
                    let plus = loss_of(&model);
                    nudge(&mut model, -2.0 * h);
                    let minus = loss_of(&model);
                    nudge(&mut model, h);
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = grads[pi][i];
                    let err = (analytic - numeric).abs()
                        / analytic.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        err < 1e-6,
                        "{:?} param {pi}[{i}]: analytic {analytic} vs numeric {numeric}",
                        kernel.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn leaky_gradient_signs_oppose_at_non_argmax_locations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ToyModel::init(
            &default_backbone(),
            4,
            PoolingKernel::leaky_max(0.1).unwrap(),
            &mut rng,
        );
        let data = tiny_dataset(1);
        let refs: Vec<&SyntheticScene> = data.iter().take(4).collect();
        let (x, labels) = stack_batch(&refs).unwrap();
        let fwd = model.forward_loss(&x, &labels).unwrap();
        let grad_logits = softmax_xent_bwd(&fwd.probs, &labels).unwrap();
        let (grad_pooled, _, _) =
            linear_bwd(&fwd.pooled, &model.fc_weight.value, &grad_logits).unwrap();
        let grad_feat = pool_backward(&grad_pooled, &fwd.pool_ctx, &model.pooling).unwrap();

        let (b, c, hf, wf) = fwd.post.last().unwrap().dims4().unwrap();
        let hw = hf * wf;
        let mut checked = 0;
        for row in 0..b * c {
            let upstream = grad_pooled.data()[row];
            if upstream == 0.0 {
                continue;
            }
            let slice = &grad_feat.data()[row * hw..(row + 1) * hw];
            let am = fwd.pool_ctx.argmax(row / c, row % c);
            for (i, &g) in slice.iter().enumerate() {
                if i == am {
                    assert_eq!(g, upstream);
                } else {
                    assert!(
                        g * upstream < 0.0,
                        "non-argmax gradient must oppose the argmax sign"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 0, "test never exercised a nonzero gradient");
    }
}
