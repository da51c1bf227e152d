//! GSResNet: a residual network of bottlenecks whose 3×3 convolutions are
//! grouped and followed by squeeze-and-excitation channel attention.

pub mod checkpoint;
pub mod layers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derived_rng, Stream};
use crate::tensor::dense::{global_avg_pool, global_avg_pool_backward};
use crate::tensor::{ActivationKind, Mode, Param, Scalar, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use layers::{Activation, BatchNorm2d, Buffer, Conv2d, Layer, Linear, SeBlock};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_px: usize,
    pub in_channels: usize,
    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub groups: usize,
    pub se_reduction: usize,
    /// Build SE blocks at all. `false` gives a plain grouped-conv ResNet.
    pub se: bool,
    pub num_classes: usize,
    pub activation: ActivationKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 64 px input, three stages of two blocks.
    pub fn desk() -> Self {
        ModelConfig {
            input_px: 64,
            in_channels: 3,
            stem_width: 16,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![2, 2, 2],
            groups: 4,
            se_reduction: 4,
            se: true,
            num_classes: 18,
            activation: ActivationKind::HSwish,
        }
    }

    /// 240 px input with ResNet-50 stage widths and depths.
    pub fn full() -> Self {
        ModelConfig {
            input_px: 240,
            in_channels: 3,
            stem_width: 64,
            stage_widths: vec![256, 512, 1024, 2048],
            blocks_per_stage: vec![3, 4, 6, 3],
            groups: 4,
            se_reduction: 16,
            se: true,
            num_classes: 18,
            activation: ActivationKind::HSwish,
        }
    }

    /// Smallest useful network, for finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            input_px: 8,
            in_channels: 3,
            stem_width: 4,
            stage_widths: vec![4, 8],
            blocks_per_stage: vec![1, 1],
            groups: 2,
            se_reduction: 2,
            se: true,
            num_classes: 3,
            activation: ActivationKind::HSwish,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_px == 0 || self.in_channels == 0 || self.stem_width == 0 {
            return bad("input_px, in_channels and stem_width must be positive".into());
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return bad(format!(
                "stage_widths ({}) and blocks_per_stage ({}) must be non-empty and the same length",
                self.stage_widths.len(),
                self.blocks_per_stage.len()
            ));
        }
        if self.groups == 0 || self.se_reduction == 0 {
            return bad("groups and se_reduction must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        for (i, (&w, &b)) in self.stage_widths.iter().zip(&self.blocks_per_stage).enumerate() {
            if b == 0 {
                return bad(format!("stage {} has no blocks", i + 1));
            }
            if w < 2 || w % 2 != 0 {
                return bad(format!("stage {} width {w} must be even", i + 1));
            }
            for (what, c) in [("width", w), ("inner width", w / 2)] {
                if c % self.groups != 0 {
                    return bad(format!("stage {} {what} {c} not divisible by groups {}", i + 1, self.groups));
                }
                if c % self.se_reduction != 0 {
                    return bad(format!(
                        "stage {} {what} {c} not divisible by se_reduction {}",
                        i + 1,
                        self.se_reduction
                    ));
                }
            }
        }
        Ok(())
    }

    /// Spatial side of the final feature map.
    pub fn output_px(&self) -> usize {
        (1..self.stage_widths.len()).fold(self.input_px, |px, _| (px - 1) / 2 + 1)
    }
}

/// One residual bottleneck.
#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    pub reduce: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    act1: Activation<T>,
    pub grouped: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    act2: Activation<T>,
    pub se: Option<SeBlock<T>>,
    pub expand: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    pub shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    act_out: Activation<T>,
}

impl<T: Scalar> Bottleneck<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: rand::Rng + ?Sized>(
        id: &str,
        cin: usize,
        width: usize,
        stride: usize,
        groups: usize,
        se_reduction: Option<usize>,
        act: ActivationKind,
        rng: &mut R,
    ) -> Self {
        let inner = width / 2;
        let reduce = Conv2d::new(&format!("{id}.reduce"), cin, inner, 1, 1, 1, rng).without_bias();
        let grouped = Conv2d::new(&format!("{id}.grouped"), inner, inner, 3, stride, groups, rng).without_bias();
        let se = se_reduction.map(|r| SeBlock::new(&format!("{id}.se"), inner, r, rng));
        let expand = Conv2d::new(&format!("{id}.expand"), inner, width, 1, 1, 1, rng).without_bias();
        let shortcut = (stride != 1 || cin != width).then(|| {
            (
                Conv2d::new(&format!("{id}.shortcut"), cin, width, 1, stride, 1, rng).without_bias(),
                BatchNorm2d::new(&format!("{id}.shortcut_bn"), width),
            )
        });
        Bottleneck {
            reduce,
            bn1: BatchNorm2d::new(&format!("{id}.bn1"), inner),
            act1: Activation::new(act),
            grouped,
            bn2: BatchNorm2d::new(&format!("{id}.bn2"), inner),
            act2: Activation::new(act),
            se,
            expand,
            bn3: BatchNorm2d::new(&format!("{id}.bn3"), width),
            shortcut,
            act_out: Activation::new(act),
        }
    }
}

impl<T: Scalar> Layer<T> for Bottleneck<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.reduce.forward(x, mode)?;
        h = self.bn1.forward(&h, mode)?;
        h = self.act1.forward(&h, mode)?;
        h = self.grouped.forward(&h, mode)?;
        h = self.bn2.forward(&h, mode)?;
        h = self.act2.forward(&h, mode)?;
        if let Some(se) = &mut self.se {
            h = se.forward(&h, mode)?;
        }
        h = self.expand.forward(&h, mode)?;
        h = self.bn3.forward(&h, mode)?;
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x, mode)?;
                h.add_assign(&bn.forward(&s, mode)?)?;
            }
            None => h.add_assign(x)?,
        }
        self.act_out.forward(&h, mode)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.reduce.infer(x)?;
        h = self.bn1.infer(&h)?;
        h = self.act1.infer(&h)?;
        h = self.grouped.infer(&h)?;
        h = self.bn2.infer(&h)?;
        h = self.act2.infer(&h)?;
        if let Some(se) = &self.se {
            h = se.infer(&h)?;
        }
        h = self.expand.infer(&h)?;
        h = self.bn3.infer(&h)?;
        match &self.shortcut {
            Some((conv, bn)) => h.add_assign(&bn.infer(&conv.infer(x)?)?)?,
            None => h.add_assign(x)?,
        }
        self.act_out.infer(&h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.act_out.backward(dy)?;
        let mut g = self.bn3.backward(&d)?;
        g = self.expand.backward(&g)?;
        if let Some(se) = &mut self.se {
            g = se.backward(&g)?;
        }
        g = self.act2.backward(&g)?;
        g = self.bn2.backward(&g)?;
        g = self.grouped.backward(&g)?;
        g = self.act1.backward(&g)?;
        g = self.bn1.backward(&g)?;
        let mut dx = self.reduce.backward(&g)?;
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let ds = bn.backward(&d)?;
                dx.add_assign(&conv.backward(&ds)?)?;
            }
            None => dx.add_assign(&d)?,
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.reduce.params();
        v.extend(self.bn1.params());
        v.extend(self.grouped.params());
        v.extend(self.bn2.params());
        if let Some(se) = &self.se {
            v.extend(se.params());
        }
        v.extend(self.expand.params());
        v.extend(self.bn3.params());
        if let Some((conv, bn)) = &self.shortcut {
            v.extend(conv.params());
            v.extend(bn.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.reduce.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.grouped.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some(se) = &mut self.se {
            v.extend(se.params_mut());
        }
        v.extend(self.expand.params_mut());
        v.extend(self.bn3.params_mut());
        if let Some((conv, bn)) = &mut self.shortcut {
            v.extend(conv.params_mut());
            v.extend(bn.params_mut());
        }
        v
    }

    fn kink_margin(&self) -> f64 {
        let se = self.se.as_ref().map_or(f64::INFINITY, |s| s.kink_margin());
        [self.act1.kink_margin(), self.act2.kink_margin(), self.act_out.kink_margin(), se]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    fn buffers(&self) -> Vec<&Buffer<T>> {
        let mut v = self.bn1.buffers();
        v.extend(self.bn2.buffers());
        v.extend(self.bn3.buffers());
        if let Some((_, bn)) = &self.shortcut {
            v.extend(bn.buffers());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        let mut v = self.bn1.buffers_mut();
        v.extend(self.bn2.buffers_mut());
        v.extend(self.bn3.buffers_mut());
        if let Some((_, bn)) = &mut self.shortcut {
            v.extend(bn.buffers_mut());
        }
        v
    }
}

/// The full classifier: stem, residual stages, pooled linear head.
#[derive(Debug, Clone)]
pub struct Gsresnet<T> {
    config: ModelConfig,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    stem_act: Activation<T>,
    pub blocks: Vec<Bottleneck<T>>,
    pub head: Linear<T>,
    pooled_hw: Option<(usize, usize)>,
}

impl<T: Scalar> Gsresnet<T> {
    /// Fresh He-initialized network. The same `(config, seed)` always gives
    /// the same parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derived_rng(seed, Stream::Init, 0, 0);
        let act = config.activation;
        let stem_conv = Conv2d::new("stem.conv", config.in_channels, config.stem_width, 3, 1, 1, &mut rng).without_bias();
        let mut blocks = Vec::new();
        let mut cin = config.stem_width;
        for (s, (&width, &count)) in config.stage_widths.iter().zip(&config.blocks_per_stage).enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(
                    &format!("stage{}.block{}", s + 1, b + 1),
                    cin,
                    width,
                    stride,
                    config.groups,
                    config.se.then_some(config.se_reduction),
                    act,
                    &mut rng,
                ));
                cin = width;
            }
        }
        let head = Linear::new("head", cin, config.num_classes, &mut rng);
        Ok(Gsresnet {
            config: config.clone(),
            stem_conv,
            stem_bn: BatchNorm2d::new("stem.bn", config.stem_width),
            stem_act: Activation::new(act),
            blocks,
            head,
            pooled_hw: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let px = self.config.input_px;
        if c != self.config.in_channels || h != px || w != px {
            return Err(Error::shape(format!(
                "model expects (N, {}, {px}, {px}) input, got {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        if x.shape()[0] == 0 {
            return Err(Error::shape("empty batch"));
        }
        Ok(())
    }

    /// Logits `(N, num_classes)`. Training mode caches for [`Gsresnet::backward`]
    /// and updates BN running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut h = self.stem_conv.forward(x, mode)?;
        h = self.stem_bn.forward(&h, mode)?;
        h = self.stem_act.forward(&h, mode)?;
        for block in &mut self.blocks {
            h = block.forward(&h, mode)?;
        }
        let (_, _, fh, fw) = h.dims4()?;
        self.pooled_hw = Some((fh, fw));
        self.head.forward(&global_avg_pool(&h)?, mode)
    }

    /// Inference-mode logits; a pure function of the parameters and `x`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.stem_conv.infer(x)?;
        h = self.stem_bn.infer(&h)?;
        h = self.stem_act.infer(&h)?;
        for block in &self.blocks {
            h = block.infer(&h)?;
        }
        self.head.infer(&global_avg_pool(&h)?)
    }

    /// Backpropagate logit gradients; returns the input gradient.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let (fh, fw) = self
            .pooled_hw
            .take()
            .ok_or_else(|| Error::Precondition("model backward without a training-mode forward".into()))?;
        let dpool = self.head.backward(dlogits)?;
        let mut g = global_avg_pool_backward(&dpool, fh, fw)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        g = self.stem_act.backward(&g)?;
        g = self.stem_bn.backward(&g)?;
        self.stem_conv.backward(&g)
    }

    /// Learnable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.stem_conv.params();
        v.extend(self.stem_bn.params());
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.stem_conv.params_mut();
        v.extend(self.stem_bn.params_mut());
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    /// BN running statistics in a fixed order.
    pub fn buffers(&self) -> Vec<&Buffer<T>> {
        let mut v = self.stem_bn.buffers();
        for b in &self.blocks {
            v.extend(b.buffers());
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        let mut v = self.stem_bn.buffers_mut();
        for b in &mut self.blocks {
            v.extend(b.buffers_mut());
        }
        v
    }

    /// See [`Layer::kink_margin`]; valid between a training forward and backward.
    pub fn kink_margin(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.kink_margin())
            .fold(self.stem_act.kink_margin(), f64::min)
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Same network with every tensor converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Gsresnet<U> {
        let mut out = Gsresnet::<U>::build(&self.config, 0).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
        }
        for (dst, src) in out.buffers_mut().into_iter().zip(self.buffers()) {
            dst.value = src.value.cast();
        }
        out
    }

    /// Turn every SE block into the identity without touching its weights.
    pub fn set_se_bypass(&mut self, bypass: bool) {
        for b in &mut self.blocks {
            if let Some(se) = &mut b.se {
                se.bypass = bypass;
            }
        }
    }
}
