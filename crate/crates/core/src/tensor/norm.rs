//! Per-channel batch normalization over `(N, H, W)`.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// What the backward pass needs from a training-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Batch statistics of a training-mode forward, biased variance.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Elements per channel, `N * H * W`.
    pub count: usize,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "batchnorm over {c} channels got gamma {:?} / beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((n, c, h * w))
}

/// Sum of `f(v)` in eight fixed lanes so the loop vectorizes while the
/// result stays independent of thread count.
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().map(|v| f(v.f64())).sum();
    for ch in chunks {
        for (a, v) in acc.iter_mut().zip(ch) {
            *a += f(v.f64());
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Training-mode forward using the batch's own mean and variance.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BnCache<T>, BatchStats)> {
    let (n, c, hw) = check(x, gamma, beta)?;
    let count = n * hw;
    if count == 0 {
        return Err(Error::shape("batchnorm over an empty batch"));
    }
    let xd = x.data();
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for s_i in 0..n {
            let base = (s_i * c + ch) * hw;
            s += lane_sum(&xd[base..base + hw], |v| v);
        }
        let m = s / count as f64;
        let mut sq = 0.0;
        for s_i in 0..n {
            let base = (s_i * c + ch) * hw;
            sq += lane_sum(&xd[base..base + hw], |v| (v - m) * (v - m));
        }
        mean[ch] = m;
        var[ch] = sq / count as f64;
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for s_i in 0..n {
        for ch in 0..c {
            let base = (s_i * c + ch) * hw;
            let (m, is, g, b) = (T::of(mean[ch]), inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                let xh = (xd[i] - m) * is;
                xhat[i] = xh;
                y[i] = xh * g + b;
            }
        }
    }
    let xhat = Tensor::new(x.shape(), xhat)?;
    Ok((
        Tensor::new(x.shape(), y)?,
        BnCache { xhat, inv_std },
        BatchStats { mean, var, count },
    ))
}

/// Inference-mode forward with fixed statistics.
pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
) -> Result<Tensor<T>> {
    let (n, c, hw) = check(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batchnorm running statistics do not match channels"));
    }
    let eps = T::of(BN_EPS);
    let scale: Vec<T> = (0..c).map(|ch| gamma.data()[ch] / (var[ch] + eps).sqrt()).collect();
    let mut y = x.data().to_vec();
    for s_i in 0..n {
        for ch in 0..c {
            let base = (s_i * c + ch) * hw;
            let (m, sc, b) = (mean[ch], scale[ch], beta.data()[ch]);
            y[base..base + hw].iter_mut().for_each(|v| *v = (*v - m) * sc + b);
        }
    }
    Tensor::new(x.shape(), y)
}

/// Backward of [`batchnorm_train`]: `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if dy.shape() != cache.xhat.shape() {
        return Err(Error::shape(format!(
            "batchnorm upstream gradient {:?} vs cached {:?}",
            dy.shape(),
            cache.xhat.shape()
        )));
    }
    let (n, c, h, w) = dy.dims4()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let (dyd, xh) = (dy.data(), cache.xhat.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = vec![T::zero(); dyd.len()];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
        for s_i in 0..n {
            let base = (s_i * c + ch) * hw;
            for i in base..base + hw {
                sum_dy += dyd[i].f64();
                sum_dy_xh += (dyd[i] * xh[i]).f64();
            }
        }
        dgamma[ch] = T::of(sum_dy_xh);
        dbeta[ch] = T::of(sum_dy);
        // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
        let k = gamma.data()[ch] * cache.inv_std[ch];
        let (mdy, mdx) = (T::of(sum_dy / m), T::of(sum_dy_xh / m));
        for s_i in 0..n {
            let base = (s_i * c + ch) * hw;
            for i in base..base + hw {
                dx[i] = k * (dyd[i] - mdy - xh[i] * mdx);
            }
        }
    }
    Ok((
        Tensor::new(dy.shape(), dx)?,
        Tensor::new(&[c], dgamma)?,
        Tensor::new(&[c], dbeta)?,
    ))
}

/// Backward of [`batchnorm_infer`] with respect to its input.
pub fn batchnorm_infer_backward<T: Scalar>(dy: &Tensor<T>, gamma: &Tensor<T>, var: &[T]) -> Result<Tensor<T>> {
    let (n, c, h, w) = dy.dims4()?;
    let hw = h * w;
    let eps = T::of(BN_EPS);
    let mut dx = dy.data().to_vec();
    for s_i in 0..n {
        for ch in 0..c {
            let k = gamma.data()[ch] / (var[ch] + eps).sqrt();
            let base = (s_i * c + ch) * hw;
            dx[base..base + hw].iter_mut().for_each(|v| *v *= k);
        }
    }
    Tensor::new(dy.shape(), dx)
}

/// Exponential moving average update of running statistics. The running
/// variance tracks the unbiased batch variance.
pub fn update_running<T: Scalar>(running_mean: &mut [T], running_var: &mut [T], stats: &BatchStats) {
    let unbias = if stats.count > 1 {
        stats.count as f64 / (stats.count - 1) as f64
    } else {
        1.0
    };
    for ch in 0..running_mean.len() {
        let rm = running_mean[ch].f64();
        let rv = running_var[ch].f64();
        running_mean[ch] = T::of((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * stats.mean[ch]);
        running_var[ch] = T::of((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * stats.var[ch] * unbias);
    }
}
