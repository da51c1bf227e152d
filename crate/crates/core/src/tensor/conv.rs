//! Grouped 2-D convolution via im2col + GEMM.
//!
//! Group `g` reads input channels `[g*Cin/G, (g+1)*Cin/G)` and writes output
//! channels `[g*Cout/G, (g+1)*Cout/G)`; the weight tensor is
//! `(Cout, Cin/G, k, k)`. Work is split per sample, and weight gradients are
//! reduced over samples in index order so results do not depend on the
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec { stride, padding, groups }
    }
}

/// `floor((input + 2p - k) / s) + 1`, or `None` if the kernel does not fit.
pub fn output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = (input + 2 * padding).checked_sub(kernel)?;
    Some(span / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin_g * self.k * self.k
    }

    fn out_hw(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1, no padding: the input group is already the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<Geometry> {
    let (n, cin, h, wd) = x.dims4()?;
    let [cout, cin_g, kh, kw] = *w.shape() else {
        return Err(Error::shape(format!("conv weight must be (Cout, Cin/g, k, k), got {:?}", w.shape())));
    };
    let g = spec.groups;
    if g == 0 || spec.stride == 0 {
        return Err(Error::shape("conv groups and stride must be positive"));
    }
    if cin % g != 0 || cout % g != 0 {
        return Err(Error::shape(format!(
            "conv channels not divisible by groups: Cin={cin}, Cout={cout}, groups={g}"
        )));
    }
    if cin_g != cin / g {
        return Err(Error::shape(format!(
            "conv weight expects {cin_g} input channels per group, input has {cin} channels in {g} groups"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!("conv kernel must be square and odd, got {kh}x{kw}")));
    }
    let (Some(ho), Some(wo)) = (
        output_len(h, kh, spec.stride, spec.padding),
        output_len(wd, kw, spec.stride, spec.padding),
    ) else {
        return Err(Error::shape(format!("conv kernel {kh} larger than padded input {h}x{wd}")));
    };
    Ok(Geometry {
        n,
        cin,
        h,
        w: wd,
        cout,
        cin_g,
        cout_g: cout / g,
        k: kh,
        ho,
        wo,
        stride: spec.stride,
        pad: spec.padding,
        groups: g,
    })
}

/// Output positions `o` in `[lo, hi)` whose input index `o * stride + offset`
/// falls inside `[0, len_in)`.
fn valid_range(len_in: usize, len_out: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let hi = (len_in as isize - offset + s - 1).div_euclid(s).clamp(0, len_out as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

/// Columns for one group of one sample: rows `(c, ki, kj)`, columns `(oy, ox)`.
fn im2col<T: Scalar>(x: &[T], geo: &Geometry, col: &mut [T]) {
    let Geometry { h, w, k, ho, wo, stride, pad, .. } = *geo;
    let mut row = 0;
    for c in 0..geo.cin_g {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let (ylo, yhi) = valid_range(h, ho, stride, ki as isize - pad as isize);
            for kj in 0..k {
                let off = kj as isize - pad as isize;
                let (xlo, xhi) = valid_range(w, wo, stride, off);
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                dst[..ylo * wo].fill(T::zero());
                dst[yhi * wo..].fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * stride + ki - pad;
                    let src = &plane[iy * w..(iy + 1) * w];
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    line[..xlo].fill(T::zero());
                    line[xhi..].fill(T::zero());
                    if xlo < xhi {
                        let start = (xlo as isize * stride as isize + off) as usize;
                        if stride == 1 {
                            line[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                        } else {
                            for (v, &s) in line[xlo..xhi].iter_mut().zip(src[start..].iter().step_by(stride)) {
                                *v = s;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add columns back onto one group's input gradient.
fn col2im<T: Scalar>(col: &[T], geo: &Geometry, dx: &mut [T]) {
    let Geometry { h, w, k, ho, wo, stride, pad, .. } = *geo;
    let mut row = 0;
    for c in 0..geo.cin_g {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let (ylo, yhi) = valid_range(h, ho, stride, ki as isize - pad as isize);
            for kj in 0..k {
                let off = kj as isize - pad as isize;
                let (xlo, xhi) = valid_range(w, wo, stride, off);
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                if xlo >= xhi {
                    continue;
                }
                let start = (xlo as isize * stride as isize + off) as usize;
                for oy in ylo..yhi {
                    let iy = oy * stride + ki - pad;
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    let line = &src[oy * wo + xlo..oy * wo + xhi];
                    if stride == 1 {
                        dst[start..start + line.len()].iter_mut().zip(line).for_each(|(d, &v)| *d += v);
                    } else {
                        for (d, &v) in dst[start..].iter_mut().step_by(stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Grouped convolution forward.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: ConvSpec) -> Result<Tensor<T>> {
    let geo = geometry(x, w, spec)?;
    if let Some(b) = bias {
        if b.len() != geo.cout {
            return Err(Error::shape(format!("conv bias has {} entries, expected {}", b.len(), geo.cout)));
        }
    }
    let in_per = geo.cin * geo.h * geo.w;
    let out_hw = geo.out_hw();
    let out_per = geo.cout * out_hw;
    let patch = geo.patch();
    let mut out = vec![T::zero(); geo.n * out_per];
    out.par_chunks_mut(out_per.max(1))
        .zip(x.data().par_chunks(in_per.max(1)))
        .for_each(|(y, xs)| {
            let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); patch * out_hw] };
            for g in 0..geo.groups {
                let xg = &xs[g * geo.cin_g * geo.h * geo.w..(g + 1) * geo.cin_g * geo.h * geo.w];
                let cols: &[T] = if geo.is_pointwise() {
                    xg
                } else {
                    im2col(xg, &geo, &mut col);
                    &col
                };
                let wg = &w.data()[g * geo.cout_g * patch..(g + 1) * geo.cout_g * patch];
                let yg = &mut y[g * geo.cout_g * out_hw..(g + 1) * geo.cout_g * out_hw];
                T::gemm(geo.cout_g, patch, out_hw, wg, false, cols, false, T::zero(), yg);
            }
            if let Some(b) = bias {
                for (c, plane) in y.chunks_mut(out_hw).enumerate() {
                    let bc = b.data()[c];
                    plane.iter_mut().for_each(|v| *v += bc);
                }
            }
        });
    Tensor::new(&[geo.n, geo.cout, geo.ho, geo.wo], out)
}

/// Gradients of a grouped convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>, spec: ConvSpec) -> Result<ConvGrads<T>> {
    let geo = geometry(x, w, spec)?;
    if dy.shape() != [geo.n, geo.cout, geo.ho, geo.wo] {
        return Err(Error::shape(format!(
            "conv upstream gradient {:?}, expected {:?}",
            dy.shape(),
            [geo.n, geo.cout, geo.ho, geo.wo]
        )));
    }
    let in_per = geo.cin * geo.h * geo.w;
    let in_g = geo.cin_g * geo.h * geo.w;
    let out_hw = geo.out_hw();
    let out_per = geo.cout * out_hw;
    let patch = geo.patch();
    let wlen = w.len();

    let mut dx = vec![T::zero(); geo.n * in_per];
    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .par_chunks_mut(in_per.max(1))
        .zip(x.data().par_chunks(in_per.max(1)))
        .zip(dy.data().par_chunks(out_per.max(1)))
        .map(|((dxs, xs), dys)| {
            let mut dw = vec![T::zero(); wlen];
            let mut col = vec![T::zero(); patch * out_hw];
            let mut dcol = vec![T::zero(); patch * out_hw];
            for g in 0..geo.groups {
                let xg = &xs[g * in_g..(g + 1) * in_g];
                let dyg = &dys[g * geo.cout_g * out_hw..(g + 1) * geo.cout_g * out_hw];
                let wg = &w.data()[g * geo.cout_g * patch..(g + 1) * geo.cout_g * patch];
                let dwg = &mut dw[g * geo.cout_g * patch..(g + 1) * geo.cout_g * patch];
                let cols: &[T] = if geo.is_pointwise() {
                    xg
                } else {
                    im2col(xg, &geo, &mut col);
                    &col
                };
                // dW_g = dY_g * cols^T
                T::gemm(geo.cout_g, out_hw, patch, dyg, false, cols, true, T::zero(), dwg);
                let dxg = &mut dxs[g * in_g..(g + 1) * in_g];
                if geo.is_pointwise() {
                    // dX_g = W_g^T * dY_g directly
                    T::gemm(patch, geo.cout_g, out_hw, wg, true, dyg, false, T::zero(), dxg);
                } else {
                    T::gemm(patch, geo.cout_g, out_hw, wg, true, dyg, false, T::zero(), &mut dcol);
                    col2im(&dcol, &geo, dxg);
                }
            }
            let db: Vec<T> = dys.chunks(out_hw.max(1)).map(|p| p.iter().copied().sum()).collect();
            (dw, db)
        })
        .collect();

    let mut dw = vec![T::zero(); wlen];
    let mut db = vec![T::zero(); geo.cout];
    for (pw, pb) in &partials {
        dw.iter_mut().zip(pw).for_each(|(a, &b)| *a += b);
        db.iter_mut().zip(pb).for_each(|(a, &b)| *a += b);
    }
    Ok(ConvGrads {
        dx: Tensor::new(x.shape(), dx)?,
        dw: Tensor::new(w.shape(), dw)?,
        db: Tensor::new(&[geo.cout], db)?,
    })
}

/// Number of learnable values of a convolution with bias.
pub fn param_count(cin: usize, cout: usize, k: usize, groups: usize) -> usize {
    cout * (cin / groups) * k * k + cout
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        assert_eq!(output_len(64, 3, 1, 1), Some(64));
        assert_eq!(output_len(64, 3, 2, 1), Some(32));
        assert_eq!(output_len(7, 1, 2, 0), Some(4));
        assert_eq!(output_len(2, 5, 1, 0), None);
    }

    #[test]
    fn pointwise_identity_per_group() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 3, 3], |i| i as f64 * 0.5 - 7.0);
        // groups=2, each group maps its 2 channels through the 2x2 identity
        let mut w = Tensor::<f64>::zeros(&[4, 2, 1, 1]);
        for c in 0..4 {
            w.data_mut()[c * 2 + c % 2] = 1.0;
        }
        let b = Tensor::zeros(&[4]);
        let y = conv2d_forward(&x, &w, Some(&b), ConvSpec::new(1, 0, 2)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 4, 5, 5]);
        let w = Tensor::<f64>::zeros(&[6, 2, 3, 3]);
        assert!(conv2d_forward(&x, &w, None, ConvSpec::new(1, 1, 2)).is_ok());
        assert!(conv2d_forward(&x, &w, None, ConvSpec::new(1, 1, 3)).is_err());
        let w_even = Tensor::<f64>::zeros(&[4, 4, 2, 2]);
        assert!(conv2d_forward(&x, &w_even, None, ConvSpec::new(1, 0, 1)).is_err());
        let w_big = Tensor::<f64>::zeros(&[4, 4, 7, 7]);
        let err = conv2d_forward(&x, &w_big, None, ConvSpec::new(1, 0, 1)).unwrap_err();
        assert!(err.to_string().contains("larger than padded input"));
        let b_bad = Tensor::<f64>::zeros(&[5]);
        assert!(conv2d_forward(&x, &w, Some(&b_bad), ConvSpec::new(1, 1, 2)).is_err());
    }

    #[test]
    fn grouped_count_is_dense_over_g() {
        let dense = param_count(32, 32, 3, 1) - 32;
        let grouped = param_count(32, 32, 3, 4) - 32;
        assert_eq!(dense, 4 * grouped);
    }
}
