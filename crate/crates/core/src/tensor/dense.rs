//! Pooling, fully connected layers, residual sums and channel scaling.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `(N, C, H, W) -> (N, C)` spatial mean.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let inv = T::of(1.0 / hw as f64);
    let data = x.data().chunks(hw.max(1)).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new(&[n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c) = dy.dims2()?;
    let hw = h * w;
    let inv = T::of(1.0 / hw as f64);
    let mut dx = Vec::with_capacity(n * c * hw);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::new(&[n, c, h, w], dx)
}

fn fc_check<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, f) = x.dims2()?;
    let [o, wf] = *w.shape() else {
        return Err(Error::shape(format!("fc weight must be (out, in), got {:?}", w.shape())));
    };
    if wf != f {
        return Err(Error::shape(format!("fc weight expects {wf} features, input has {f}")));
    }
    Ok((n, f, o))
}

/// `y = x W^T + b` with `x: (N, F)`, `W: (O, F)`, `b: (O)`.
pub fn fully_connected<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, o) = fc_check(x, w)?;
    if b.len() != o {
        return Err(Error::shape(format!("fc bias has {} entries, expected {o}", b.len())));
    }
    let mut y = Vec::with_capacity(n * o);
    for _ in 0..n {
        y.extend_from_slice(b.data());
    }
    T::gemm(n, f, o, x.data(), false, w.data(), true, T::one(), &mut y);
    Tensor::new(&[n, o], y)
}

/// `(dx, dW, db)` of [`fully_connected`].
pub fn fully_connected_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f, o) = fc_check(x, w)?;
    if dy.shape() != [n, o] {
        return Err(Error::shape(format!("fc upstream gradient {:?}, expected [{n}, {o}]", dy.shape())));
    }
    let mut dx = vec![T::zero(); n * f];
    T::gemm(n, o, f, dy.data(), false, w.data(), false, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); o * f];
    T::gemm(o, n, f, dy.data(), true, x.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); o];
    for row in dy.data().chunks(o.max(1)) {
        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    Ok((
        Tensor::new(&[n, f], dx)?,
        Tensor::new(&[o, f], dw)?,
        Tensor::new(&[o], db)?,
    ))
}

/// Elementwise sum of two tensors of identical shape.
pub fn residual_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    out.add_assign(b).map_err(|_| {
        Error::shape(format!("residual add of {:?} and {:?}", a.shape(), b.shape()))
    })?;
    Ok(out)
}

/// `out[n, c, :, :] = s[n, c] * x[n, c, :, :]`.
pub fn channel_scale<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if s.shape() != [n, c] {
        return Err(Error::shape(format!("channel scale {:?} for input {:?}", s.shape(), x.shape())));
    }
    let hw = h * w;
    let mut out = x.data().to_vec();
    for (plane, &k) in out.chunks_mut(hw.max(1)).zip(s.data()) {
        plane.iter_mut().for_each(|v| *v *= k);
    }
    Tensor::new(x.shape(), out)
}

/// `(dx, ds)` of [`channel_scale`].
pub fn channel_scale_backward<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if dy.shape() != x.shape() || s.shape() != [n, c] {
        return Err(Error::shape("channel scale gradient shape mismatch"));
    }
    let hw = h * w;
    let dx = channel_scale(dy, s)?;
    let ds = x
        .data()
        .chunks(hw.max(1))
        .zip(dy.data().chunks(hw.max(1)))
        .map(|(xp, gp)| xp.iter().zip(gp).map(|(&a, &b)| a * b).sum())
        .collect();
    Ok((dx, Tensor::new(&[n, c], ds)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_of_constant_map() {
        let x = Tensor::<f64>::filled(&[2, 3, 4, 5], 1.75);
        let p = global_avg_pool(&x).unwrap();
        assert_eq!(p.shape(), &[2, 3]);
        assert!(p.data().iter().all(|&v| (v - 1.75).abs() < 1e-15));
    }

    #[test]
    fn fc_matches_hand_product() {
        let x = Tensor::<f64>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(&[3], vec![0.5, 0.0, -1.0]).unwrap();
        let y = fully_connected(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.5, 2.0, 2.0]);
        assert!(fully_connected(&x, &Tensor::zeros(&[3, 4]), &b).is_err());
    }

    #[test]
    fn residual_requires_identical_shapes() {
        let a = Tensor::<f64>::filled(&[1, 2, 2, 2], 1.0);
        let b = Tensor::<f64>::filled(&[1, 2, 2, 2], 2.0);
        assert!(residual_add(&a, &b).unwrap().data().iter().all(|&v| v == 3.0));
        assert!(residual_add(&a, &Tensor::zeros(&[1, 2, 2, 1])).is_err());
    }
}
