//! Dual-encoder change segmentation network.
//!
//! Each image of a pair goes through its own convolutional feature extractor,
//! truncated at the configured tap layer. The two feature maps are
//! concatenated along channels and decoded by `log2(stride)` blocks of
//! (nearest x2 upsample, 3x3 conv, ReLU), a 1x1 conv and a logistic squash.

mod checkpoint;
mod import;
pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use import::{import_backbone, BackboneManifest, ImportedLayer};
use layers::{
    relu_backward_inplace, relu_inplace, upsample2, upsample2_backward, Conv2d, ConvGrad,
};

use crate::error::{Error, Result};
use crate::types::{Image, ImagePair, ProbabilityMask, CHANNELS, DEFAULT_CLAMP_EPS};

/// Widths of the default backbone, two conv layers per stage.
pub const TINY_WIDTHS: [usize; 4] = [16, 32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneFamily {
    #[default]
    Tiny,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub out_channels: usize,
    pub stride: usize,
}

/// Encoder architecture. Every layer is a 3x3 convolution followed by ReLU;
/// layers are numbered from 1 and the feature map is read after `tap_layer`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub tap_layer: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::tiny()
    }
}

impl BackboneSpec {
    /// Four stages of (3x3 stride 2, 3x3 stride 1) with widths 16/32/64/128,
    /// tapped after the last layer (stride 16).
    pub fn tiny() -> Self {
        let mut layers = Vec::new();
        for (stage, &width) in TINY_WIDTHS.iter().enumerate() {
            for (i, stride) in [2, 1].into_iter().enumerate() {
                layers.push(LayerSpec {
                    name: format!("stage{}_conv{}", stage + 1, i + 1),
                    out_channels: width,
                    stride,
                });
            }
        }
        let tap_layer = layers.len();
        Self {
            family: BackboneFamily::Tiny,
            in_channels: CHANNELS,
            layers,
            tap_layer,
        }
    }

    pub fn with_tap(mut self, tap_layer: usize) -> Result<Self> {
        self.tap_layer = tap_layer;
        self.validate()?;
        Ok(self)
    }

    pub fn total_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != CHANNELS {
            return Err(Error::Config(format!(
                "backbone expects {} input channels, images have {CHANNELS}",
                self.in_channels
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("backbone has no layers".into()));
        }
        if !(1..=self.layers.len()).contains(&self.tap_layer) {
            return Err(Error::Config(format!(
                "tap_layer {} outside 1..={}",
                self.tap_layer,
                self.layers.len()
            )));
        }
        for l in &self.layers {
            if l.out_channels == 0 || !matches!(l.stride, 1 | 2) {
                return Err(Error::Config(format!(
                    "layer {:?}: needs >= 1 output channel and stride 1 or 2",
                    l.name
                )));
            }
        }
        Ok(())
    }

    /// Input pixels per feature cell at the tap.
    pub fn tap_stride(&self) -> usize {
        self.layers[..self.tap_layer]
            .iter()
            .map(|l| l.stride)
            .product()
    }

    pub fn tap_channels(&self) -> usize {
        self.layers[self.tap_layer - 1].out_channels
    }

    fn in_channels_of(&self, layer: usize) -> usize {
        if layer == 0 {
            self.in_channels
        } else {
            self.layers[layer - 1].out_channels
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightTying {
    Tied,
    #[default]
    Untied,
}

/// Which feature extractor to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// Planar (C x H' x W') feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    height: usize,
    width: usize,
    channels: usize,
    stride: usize,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        stride: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature tensor {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite feature value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            stride,
            data,
        })
    }

    pub fn zeros_like(other: &FeatureTensor) -> Self {
        Self {
            data: vec![0.0; other.data.len()],
            ..other.clone()
        }
    }

    /// (height, width, channels)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One channel plane.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Channel-axis concatenation; `fa` occupies the leading channels.
pub fn fuse(fa: &FeatureTensor, fb: &FeatureTensor) -> Result<FeatureTensor> {
    if (fa.height, fa.width, fa.stride) != (fb.height, fb.width, fb.stride) {
        return Err(Error::Shape(format!(
            "cannot fuse {}x{} (stride {}) with {}x{} (stride {})",
            fa.height, fa.width, fa.stride, fb.height, fb.width, fb.stride
        )));
    }
    let mut data = Vec::with_capacity(fa.data.len() + fb.data.len());
    data.extend_from_slice(&fa.data);
    data.extend_from_slice(&fb.data);
    Ok(FeatureTensor {
        height: fa.height,
        width: fa.width,
        channels: fa.channels + fb.channels,
        stride: fa.stride,
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Encoder {
    pub(crate) layers: Vec<Conv2d>,
}

impl Encoder {
    fn init(spec: &BackboneSpec, rng: &mut ChaCha8Rng) -> Self {
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| Conv2d::he_init(spec.in_channels_of(i), l.out_channels, 3, l.stride, rng))
            .collect();
        Self { layers }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Decoder {
    pub(crate) blocks: Vec<Conv2d>,
    pub(crate) head: Conv2d,
}

/// Decoder block widths in processing order (coarsest first).
pub fn decoder_widths(blocks: usize) -> Vec<usize> {
    const FINE_TO_COARSE: [usize; 4] = [8, 16, 32, 64];
    let mut widths: Vec<usize> = (0..blocks)
        .map(|i| FINE_TO_COARSE[i.min(FINE_TO_COARSE.len() - 1)])
        .collect();
    widths.reverse();
    widths
}

impl Decoder {
    fn init(in_channels: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let widths = decoder_widths(stride.trailing_zeros() as usize);
        let mut blocks = Vec::with_capacity(widths.len());
        let mut c = in_channels;
        for w in widths {
            blocks.push(Conv2d::he_init(c, w, 3, 1, rng));
            c = w;
        }
        let head = Conv2d::he_init(c, 1, 1, 1, rng);
        Self { blocks, head }
    }

    fn in_channels(&self) -> usize {
        self.blocks.first().unwrap_or(&self.head).in_channels
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input_a: Vec<f32>,
    input_b: Vec<f32>,
    enc_a: Vec<Vec<f32>>,
    enc_b: Vec<Vec<f32>>,
    enc_dims: Vec<(usize, usize)>,
    dec_inputs: Vec<Vec<f32>>,
    dec_outputs: Vec<Vec<f32>>,
    dec_dims: Vec<(usize, usize)>,
    height: usize,
    width: usize,
    logits: Vec<f32>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Parameter gradients in the canonical slot order of [`ChangeModel::conv_slots`].
/// Frozen or unused slots hold `None`.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub(crate) slots: Vec<Option<ConvGrad>>,
}

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            match (a, b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (a @ None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|g| g.weight.iter().chain(&g.bias).all(|v| v.is_finite()))
    }

    /// Sum of |g| per slot; `None` for slots without gradient.
    pub fn slot_magnitudes(&self) -> Vec<Option<f64>> {
        self.slots
            .iter()
            .map(|g| {
                g.as_ref()
                    .map(|g| g.weight.iter().chain(&g.bias).map(|v| v.abs() as f64).sum())
            })
            .collect()
    }
}

/// Where a parameter slot lives in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    EncoderA(usize),
    EncoderB(usize),
    DecoderBlock(usize),
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeModel {
    backbone: BackboneSpec,
    weight_tying: WeightTying,
    trainable_tail_k: usize,
    clamp_eps: f64,
    pub(crate) encoder_a: Encoder,
    /// `None` when tied: both branches use `encoder_a`.
    pub(crate) encoder_b: Option<Encoder>,
    pub(crate) decoder: Decoder,
}

impl ChangeModel {
    /// A freshly initialized model. Untied encoders start from identical weights.
    /// All encoder layers up to the tap are trainable.
    pub fn new(backbone: BackboneSpec, weight_tying: WeightTying, seed: u64) -> Result<Self> {
        backbone.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder_a = Encoder::init(&backbone, &mut rng);
        let encoder_b = match weight_tying {
            WeightTying::Tied => None,
            WeightTying::Untied => Some(encoder_a.clone()),
        };
        let decoder = Decoder::init(2 * backbone.tap_channels(), backbone.tap_stride(), &mut rng);
        let trainable_tail_k = backbone.tap_layer;
        Ok(Self {
            backbone,
            weight_tying,
            trainable_tail_k,
            clamp_eps: DEFAULT_CLAMP_EPS,
            encoder_a,
            encoder_b,
            decoder,
        })
    }

    pub fn tiny(weight_tying: WeightTying, seed: u64) -> Result<Self> {
        Self::new(BackboneSpec::tiny(), weight_tying, seed)
    }

    pub(crate) fn from_parts(
        backbone: BackboneSpec,
        weight_tying: WeightTying,
        trainable_tail_k: usize,
        encoder_a: Encoder,
        encoder_b: Option<Encoder>,
        decoder: Decoder,
    ) -> Result<Self> {
        backbone.validate()?;
        if trainable_tail_k > backbone.tap_layer {
            return Err(Error::Config(format!(
                "trainable_tail_k {trainable_tail_k} exceeds tap_layer {}",
                backbone.tap_layer
            )));
        }
        if (weight_tying == WeightTying::Tied) != encoder_b.is_none() {
            return Err(Error::Config(
                "weight tying does not match the encoders present".into(),
            ));
        }
        let model = Self {
            backbone,
            weight_tying,
            trainable_tail_k,
            clamp_eps: DEFAULT_CLAMP_EPS,
            encoder_a,
            encoder_b,
            decoder,
        };
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<()> {
        let spec = &self.backbone;
        for enc in std::iter::once(&self.encoder_a).chain(self.encoder_b.as_ref()) {
            if enc.layers.len() != spec.layers.len() {
                return Err(Error::Config(
                    "encoder depth does not match backbone spec".into(),
                ));
            }
            for (i, (conv, l)) in enc.layers.iter().zip(&spec.layers).enumerate() {
                if conv.in_channels != spec.in_channels_of(i)
                    || conv.out_channels != l.out_channels
                    || conv.stride != l.stride
                    || conv.kernel != 3
                {
                    return Err(Error::Config(format!(
                        "encoder layer {:?} does not match backbone spec",
                        l.name
                    )));
                }
            }
        }
        let blocks = spec.tap_stride().trailing_zeros() as usize;
        if self.decoder.blocks.len() != blocks
            || self.decoder.in_channels() != 2 * spec.tap_channels()
            || self.decoder.head.out_channels != 1
        {
            return Err(Error::Config("decoder does not match backbone tap".into()));
        }
        Ok(())
    }

    pub fn backbone(&self) -> &BackboneSpec {
        &self.backbone
    }

    pub fn weight_tying(&self) -> WeightTying {
        self.weight_tying
    }

    pub fn trainable_tail_k(&self) -> usize {
        self.trainable_tail_k
    }

    pub fn tap_stride(&self) -> usize {
        self.backbone.tap_stride()
    }

    fn encoder(&self, side: Side) -> &Encoder {
        match side {
            Side::A => &self.encoder_a,
            Side::B => self.encoder_b.as_ref().unwrap_or(&self.encoder_a),
        }
    }

    /// Marks the last `k` encoder layers before (and including) the tap as
    /// trainable and freezes the rest. The decoder is always trainable.
    pub fn set_trainable_tail(mut self, k: usize) -> Result<Self> {
        if k > self.backbone.tap_layer {
            return Err(Error::Config(format!(
                "trainable tail {k} outside 0..={}",
                self.backbone.tap_layer
            )));
        }
        self.trainable_tail_k = k;
        Ok(self)
    }

    fn first_trainable_layer(&self) -> usize {
        self.backbone.tap_layer - self.trainable_tail_k
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let s = self.tap_stride();
        if height % s != 0 || width % s != 0 {
            return Err(Error::Shape(format!(
                "input {height}x{width} not divisible by tap stride {s}"
            )));
        }
        Ok(())
    }

    /// Planar input with each channel standardized to zero mean and unit
    /// variance over the image.
    fn preprocess(image: &Image) -> Vec<f32> {
        let mut x = image.to_planar();
        let n = image.height() * image.width();
        for plane in x.chunks_exact_mut(n) {
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = plane
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            let scale = 1.0 / (var.sqrt() + 1e-3);
            for v in plane {
                *v = ((*v as f64 - mean) * scale) as f32;
            }
        }
        x
    }

    fn run_encoder(
        &self,
        side: Side,
        image: &Image,
        keep: bool,
    ) -> (Vec<f32>, Vec<Vec<f32>>, Vec<(usize, usize)>) {
        let enc = self.encoder(side);
        let input = Self::preprocess(image);
        let (mut h, mut w) = image.dims();
        let mut outputs = Vec::new();
        let mut dims = Vec::new();
        let mut x = input.clone();
        for conv in &enc.layers[..self.backbone.tap_layer] {
            let (mut y, ho, wo) = conv.forward(&x, h, w);
            relu_inplace(&mut y);
            h = ho;
            w = wo;
            dims.push((h, w));
            if keep {
                outputs.push(y.clone());
            }
            x = y;
        }
        if !keep {
            outputs.push(x);
        }
        (input, outputs, dims)
    }

    /// Runs one encoder up to the tap layer.
    pub fn extract_features(&self, image: &Image, side: Side) -> Result<FeatureTensor> {
        self.check_input(image.height(), image.width())?;
        let (_, mut outputs, dims) = self.run_encoder(side, image, false);
        let (h, w) = *dims.last().expect("tap_layer >= 1");
        FeatureTensor::new(
            h,
            w,
            self.backbone.tap_channels(),
            self.tap_stride(),
            outputs.pop().expect("output"),
        )
    }

    fn decode_trace(
        &self,
        fused: &[f32],
        h: usize,
        w: usize,
        keep: bool,
    ) -> (Vec<Vec<f32>>, Vec<Vec<f32>>, Vec<(usize, usize)>, Vec<f32>) {
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut dims = Vec::new();
        let (mut h, mut w) = (h, w);
        let mut x = fused.to_vec();
        for conv in &self.decoder.blocks {
            let up = upsample2(&x, conv.in_channels, h, w);
            h *= 2;
            w *= 2;
            let (mut y, _, _) = conv.forward(&up, h, w);
            relu_inplace(&mut y);
            dims.push((h, w));
            if keep {
                inputs.push(up);
                outputs.push(y.clone());
            }
            x = y;
        }
        let (logits, _, _) = self.decoder.head.forward(&x, h, w);
        if keep {
            inputs.push(x);
        }
        (inputs, outputs, dims, logits)
    }

    /// Decoder logits for a fused feature map.
    pub fn decode_logits(&self, fused: &FeatureTensor) -> Result<Vec<f32>> {
        let s = fused.stride;
        if !s.is_power_of_two() {
            return Err(Error::Config(format!(
                "fused stride {s} is not a power of two"
            )));
        }
        if s != self.tap_stride() || fused.channels != self.decoder.in_channels() {
            return Err(Error::Config(format!(
                "decoder expects stride {} with {} channels, got stride {s} with {}",
                self.tap_stride(),
                self.decoder.in_channels(),
                fused.channels
            )));
        }
        Ok(self
            .decode_trace(&fused.data, fused.height, fused.width, false)
            .3)
    }

    pub fn decode(&self, fused: &FeatureTensor) -> Result<ProbabilityMask> {
        let logits = self.decode_logits(fused)?;
        ProbabilityMask::from_logits(
            fused.height * fused.stride,
            fused.width * fused.stride,
            &logits,
            self.clamp_eps,
        )
    }

    pub fn forward(&self, pair: &ImagePair) -> Result<ProbabilityMask> {
        let fa = self.extract_features(pair.t0(), Side::A)?;
        let fb = self.extract_features(pair.t1(), Side::B)?;
        self.decode(&fuse(&fa, &fb)?)
    }

    /// Forward pass that keeps what [`ChangeModel::backward`] needs.
    pub fn forward_trace(&self, pair: &ImagePair) -> Result<ForwardTrace> {
        let (height, width) = pair.dims();
        self.check_input(height, width)?;
        let (input_a, enc_a, enc_dims) = self.run_encoder(Side::A, pair.t0(), true);
        let (input_b, enc_b, _) = self.run_encoder(Side::B, pair.t1(), true);
        let mut fused = enc_a.last().expect("tap >= 1").clone();
        fused.extend_from_slice(enc_b.last().expect("tap >= 1"));
        let (fh, fw) = *enc_dims.last().expect("tap >= 1");
        let (dec_inputs, dec_outputs, dec_dims, logits) = self.decode_trace(&fused, fh, fw, true);
        Ok(ForwardTrace {
            input_a,
            input_b,
            enc_a,
            enc_b,
            enc_dims,
            dec_inputs,
            dec_outputs,
            dec_dims,
            height,
            width,
            logits,
        })
    }

    /// Number of parameter slots (one per convolution).
    pub fn slot_count(&self) -> usize {
        let l = self.backbone.total_layers();
        l + self.encoder_b.as_ref().map_or(0, |_| l) + self.decoder.blocks.len() + 1
    }

    pub fn slot_kind(&self, slot: usize) -> SlotKind {
        let l = self.backbone.total_layers();
        let b = self.encoder_b.as_ref().map_or(0, |_| l);
        if slot < l {
            SlotKind::EncoderA(slot)
        } else if slot < l + b {
            SlotKind::EncoderB(slot - l)
        } else if slot < l + b + self.decoder.blocks.len() {
            SlotKind::DecoderBlock(slot - l - b)
        } else {
            SlotKind::Head
        }
    }

    pub fn conv_slots(&self) -> Vec<&Conv2d> {
        let mut v: Vec<&Conv2d> = self.encoder_a.layers.iter().collect();
        if let Some(b) = &self.encoder_b {
            v.extend(b.layers.iter());
        }
        v.extend(self.decoder.blocks.iter());
        v.push(&self.decoder.head);
        v
    }

    pub(crate) fn conv_slots_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut v: Vec<&mut Conv2d> = self.encoder_a.layers.iter_mut().collect();
        if let Some(b) = &mut self.encoder_b {
            v.extend(b.layers.iter_mut());
        }
        v.extend(self.decoder.blocks.iter_mut());
        v.push(&mut self.decoder.head);
        v
    }

    pub fn slot_trainable(&self, slot: usize) -> bool {
        match self.slot_kind(slot) {
            SlotKind::EncoderA(l) | SlotKind::EncoderB(l) => {
                l >= self.first_trainable_layer() && l < self.backbone.tap_layer
            }
            SlotKind::DecoderBlock(_) | SlotKind::Head => true,
        }
    }

    fn encoder_slot(&self, side: Side, layer: usize) -> usize {
        match (side, &self.encoder_b) {
            (Side::B, Some(_)) => self.backbone.total_layers() + layer,
            _ => layer,
        }
    }

    /// Gradients of a loss whose derivative w.r.t. the logits is `dlogits`.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f32]) -> ModelGrads {
        assert_eq!(
            dlogits.len(),
            trace.logits.len(),
            "gradient does not match logits"
        );
        let mut slots: Vec<Option<ConvGrad>> = self
            .conv_slots()
            .iter()
            .enumerate()
            .map(|(i, c)| self.slot_trainable(i).then(|| ConvGrad::zeros_like(c)))
            .collect();
        let n_blocks = self.decoder.blocks.len();
        let head_slot = slots.len() - 1;
        let block_slot0 = head_slot - n_blocks;

        let (mut h, mut w) = trace
            .dec_dims
            .last()
            .copied()
            .unwrap_or(*trace.enc_dims.last().expect("tap >= 1"));
        let head_in = trace.dec_inputs.last().expect("head input");
        let mut dx = self
            .decoder
            .head
            .backward(
                head_in,
                h,
                w,
                dlogits,
                slots[head_slot].as_mut().expect("head trainable"),
                true,
            )
            .expect("input grad");
        for j in (0..n_blocks).rev() {
            let conv = &self.decoder.blocks[j];
            relu_backward_inplace(&mut dx, &trace.dec_outputs[j]);
            let du = conv
                .backward(
                    &trace.dec_inputs[j],
                    h,
                    w,
                    &dx,
                    slots[block_slot0 + j].as_mut().expect("decoder trainable"),
                    true,
                )
                .expect("input grad");
            h /= 2;
            w /= 2;
            dx = upsample2_backward(&du, conv.in_channels, h, w);
        }

        if self.trainable_tail_k > 0 {
            let half = dx.len() / 2;
            let (da, db) = dx.split_at(half);
            self.encoder_backward(
                Side::A,
                &trace.input_a,
                &trace.enc_a,
                &trace.enc_dims,
                trace.dims(),
                da.to_vec(),
                &mut slots,
            );
            self.encoder_backward(
                Side::B,
                &trace.input_b,
                &trace.enc_b,
                &trace.enc_dims,
                trace.dims(),
                db.to_vec(),
                &mut slots,
            );
        }
        ModelGrads { slots }
    }

    #[allow(clippy::too_many_arguments)]
    fn encoder_backward(
        &self,
        side: Side,
        input: &[f32],
        outputs: &[Vec<f32>],
        dims: &[(usize, usize)],
        image_dims: (usize, usize),
        mut dy: Vec<f32>,
        slots: &mut [Option<ConvGrad>],
    ) {
        let enc = self.encoder(side);
        let first = self.first_trainable_layer();
        for l in (first..self.backbone.tap_layer).rev() {
            relu_backward_inplace(&mut dy, &outputs[l]);
            let (x, (h, w)) = if l == 0 {
                (input, image_dims)
            } else {
                (&outputs[l - 1][..], dims[l - 1])
            };
            let slot = self.encoder_slot(side, l);
            let grad = slots[slot].as_mut().expect("trainable slot");
            match enc.layers[l].backward(x, h, w, &dy, grad, l > first) {
                Some(next) => dy = next,
                None => break,
            }
        }
    }

    /// Raw little-endian bytes of all encoder parameters.
    pub fn encoder_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for enc in std::iter::once(&self.encoder_a).chain(self.encoder_b.as_ref()) {
            for conv in &enc.layers {
                for v in conv.weight.iter().chain(&conv.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn encoder_digest(&self) -> String {
        hex::encode(Sha256::digest(self.encoder_bytes()))
    }

    /// SHA-256 over every parameter, slot by slot.
    pub fn parameter_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for conv in self.conv_slots() {
            for v in conv.weight.iter().chain(&conv.bias) {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_slots()
            .iter()
            .map(|c| c.weight.len() + c.bias.len())
            .sum()
    }
}
