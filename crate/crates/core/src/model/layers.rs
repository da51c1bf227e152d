//! Stateful layers: parameters plus whatever the backward pass needs from
//! the last training-mode forward.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::activation::{activate, activate_backward, sigmoid_backward, sigmoid_forward, ActivationKind};
use crate::tensor::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::tensor::dense::{
    channel_scale, channel_scale_backward, fully_connected, fully_connected_backward, global_avg_pool,
    global_avg_pool_backward,
};
use crate::tensor::norm::{batchnorm_backward, batchnorm_infer, batchnorm_train, update_running, BnCache};
use crate::tensor::{Mode, Param, Scalar, Tensor};

/// A non-learnable tensor that still belongs in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub id: String,
    pub value: Tensor<T>,
}

fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

fn missing_cache(layer: &str) -> Error {
    Error::Precondition(format!("{layer}: backward called without a training-mode forward"))
}

pub trait Layer<T: Scalar> {
    /// Training mode caches activations for [`Layer::backward`].
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>>;
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;
    fn buffers(&self) -> Vec<&Buffer<T>> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        Vec::new()
    }
    /// Smallest distance from any cached activation input to a point where
    /// the activation's derivative jumps. Infinite when nothing is cached.
    fn kink_margin(&self) -> f64 {
        f64::INFINITY
    }
}

fn margin_to<T: Scalar>(values: &[T], kinks: &[f64]) -> f64 {
    values
        .iter()
        .flat_map(|v| kinks.iter().map(move |k| (v.f64() - k).abs()))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    /// `None` for convolutions whose output goes straight into batch norm,
    /// which would cancel a per-channel offset anyway.
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        id: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin / groups) * k * k;
        Conv2d {
            weight: Param::new(format!("{id}.weight"), he_normal(&[cout, cin / groups, k, k], fan_in, rng)),
            bias: Some(Param::new(format!("{id}.bias"), Tensor::zeros(&[cout]))),
            spec: ConvSpec::new(stride, k / 2, groups),
            input: None,
        }
    }

    /// Drop the bias term.
    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = conv2d_forward(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.spec)?;
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.spec)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.weight.id))?;
        let g = conv2d_backward(&x, &self.weight.value, dy, self.spec)?;
        self.weight.accumulate(&g.dw)?;
        if let Some(b) = &mut self.bias {
            b.accumulate(&g.db)?;
        }
        Ok(g.dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(id: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{id}.gamma"), Tensor::filled(&[channels], T::one())),
            beta: Param::new(format!("{id}.beta"), Tensor::zeros(&[channels])),
            running_mean: Buffer {
                id: format!("{id}.running_mean"),
                value: Tensor::zeros(&[channels]),
            },
            running_var: Buffer {
                id: format!("{id}.running_var"),
                value: Tensor::filled(&[channels], T::one()),
            },
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Infer => self.infer(x),
            Mode::Train => {
                let (y, cache, stats) = batchnorm_train(x, &self.gamma.value, &self.beta.value)?;
                update_running(
                    self.running_mean.value.data_mut(),
                    self.running_var.value.data_mut(),
                    &stats,
                );
                self.cache = Some(cache);
                Ok(y)
            }
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        batchnorm_infer(
            x,
            &self.gamma.value,
            &self.beta.value,
            self.running_mean.value.data(),
            self.running_var.value.data(),
        )
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache(&self.gamma.id))?;
        let (dx, dgamma, dbeta) = batchnorm_backward(dy, &self.gamma.value, &cache)?;
        self.gamma.accumulate(&dgamma)?;
        self.beta.accumulate(&dbeta)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Buffer<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Debug, Clone)]
pub struct Activation<T> {
    pub kind: ActivationKind,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, input: None }
    }
}

impl<T: Scalar> Layer<T> for Activation<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(activate(self.kind, x))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(activate(self.kind, x))
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("activation"))?;
        activate_backward(self.kind, &x, dy)
    }

    fn kink_margin(&self) -> f64 {
        self.input
            .as_ref()
            .map_or(f64::INFINITY, |x| margin_to(x.data(), self.kind.kinks()))
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(id: &str, fin: usize, fout: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(format!("{id}.weight"), he_normal(&[fout, fin], fin, rng)),
            bias: Param::new(format!("{id}.bias"), Tensor::zeros(&[fout])),
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = fully_connected(x, &self.weight.value, &self.bias.value)?;
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        fully_connected(x, &self.weight.value, &self.bias.value)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.weight.id))?;
        let (dx, dw, db) = fully_connected_backward(&x, &self.weight.value, dy)?;
        self.weight.accumulate(&dw)?;
        self.bias.accumulate(&db)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
struct SeCache<T> {
    x: Tensor<T>,
    hidden_pre: Tensor<T>,
    scale: Tensor<T>,
}

/// Squeeze-and-excitation: `x * sigmoid(fc2(relu(fc1(pool(x)))))` per channel.
#[derive(Debug, Clone)]
pub struct SeBlock<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    /// Force the channel scale to 1 (identity block).
    pub bypass: bool,
    cache: Option<SeCache<T>>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new<R: Rng + ?Sized>(id: &str, channels: usize, reduction: usize, rng: &mut R) -> Self {
        let hidden = channels / reduction;
        SeBlock {
            fc1: Linear::new(&format!("{id}.fc1"), channels, hidden, rng),
            fc2: Linear::new(&format!("{id}.fc2"), hidden, channels, rng),
            bypass: false,
            cache: None,
        }
    }

    /// Channel weights `(N, C)` for input `x`.
    pub fn scale(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = global_avg_pool(x)?;
        let hidden = activate(ActivationKind::Relu, &self.fc1.infer(&pooled)?);
        Ok(sigmoid_forward(&self.fc2.infer(&hidden)?))
    }
}

impl<T: Scalar> Layer<T> for SeBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if self.bypass {
            if mode == Mode::Train {
                self.cache = None;
            }
            return Ok(x.clone());
        }
        if mode == Mode::Infer {
            return self.infer(x);
        }
        let pooled = global_avg_pool(x)?;
        let hidden_pre = self.fc1.forward(&pooled, mode)?;
        let hidden = activate(ActivationKind::Relu, &hidden_pre);
        let scale = sigmoid_forward(&self.fc2.forward(&hidden, mode)?);
        let y = channel_scale(x, &scale)?;
        self.cache = Some(SeCache {
            x: x.clone(),
            hidden_pre,
            scale,
        });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.bypass {
            return Ok(x.clone());
        }
        channel_scale(x, &self.scale(x)?)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if self.bypass {
            return Ok(dy.clone());
        }
        let c = self.cache.take().ok_or_else(|| missing_cache(&self.fc1.weight.id))?;
        let (_, _, h, w) = c.x.dims4()?;
        let (mut dx, dscale) = channel_scale_backward(&c.x, &c.scale, dy)?;
        let dz = sigmoid_backward(&c.scale, &dscale)?;
        let dhidden = self.fc2.backward(&dz)?;
        let dpre = activate_backward(ActivationKind::Relu, &c.hidden_pre, &dhidden)?;
        let dpooled = self.fc1.backward(&dpre)?;
        dx.add_assign(&global_avg_pool_backward(&dpooled, h, w)?)?;
        Ok(dx)
    }

    fn kink_margin(&self) -> f64 {
        self.cache
            .as_ref()
            .map_or(f64::INFINITY, |c| margin_to(c.hidden_pre.data(), ActivationKind::Relu.kinks()))
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}
