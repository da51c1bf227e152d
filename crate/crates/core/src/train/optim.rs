use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{Param, Scalar};

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = epochs`.
pub fn cosine_lr(t: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs == 0 {
        return cfg.lr_max;
    }
    let frac = t.min(cfg.epochs) as f64 / cfg.epochs as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * frac).cos())
}

/// Nadam with coupled L2 weight decay.
///
/// With step index `t` starting at 1:
///
/// ```text
/// g  = grad + wd * theta
/// m  = b1 * m + (1 - b1) * g
/// v  = b2 * v + (1 - b2) * g^2
/// mh = b1 * m / (1 - b1^(t+1)) + (1 - b1) * g / (1 - b1^t)
/// vh = v / (1 - b2^t)
/// theta -= lr * mh / (sqrt(vh) + eps)
/// ```
#[derive(Debug, Clone)]
pub struct Nadam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Nadam {
    pub const EPS: f64 = 1e-8;

    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Nadam {
            beta1,
            beta2,
            eps: Self::EPS,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.weight_decay)
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update to every parameter from its accumulated gradient.
    /// The parameter list must be the same, in the same order, every call.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()) {
            return Err(Error::shape("optimizer state does not match the parameter list"));
        }
        self.t += 1;
        let t = self.t as f64;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1_next = 1.0 - b1.powf(t + 1.0);
        let c1 = 1.0 - b1.powf(t);
        let c2 = 1.0 - b2.powf(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad, .. } = &mut **p;
            for (((theta, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let th = theta.f64();
                let g = g.f64() + self.weight_decay * th;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = b1 * *m / c1_next + (1.0 - b1) * g / c1;
                let v_hat = *v / c2;
                *theta = T::of(th - lr * m_hat / (v_hat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}
