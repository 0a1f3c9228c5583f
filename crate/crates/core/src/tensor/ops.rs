//! Forward-only kernels.
//!
//! Conventions:
//! - Matrices are row-major `rows × cols`.
//! - Convolutions are cross-correlations (the kernel is not flipped) over
//!   `C × H × W` inputs with `C_out × C_in/groups × k × k` kernels and
//!   symmetric zero padding.
//! - Bilinear resizing uses half-pixel centers (`align_corners = false`):
//!   output pixel `i` samples input coordinate `(i + 0.5) * in / out - 0.5`,
//!   clamped to the valid range.
//! - Reductions that feed the proxy metrics (`l2_norm`, `sum_of_squares`)
//!   accumulate in `f64`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `a[M×K] · b[K×N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if k != kb {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)).take(m) {
        for (&aik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if aik == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `a[M×K] · b[N×K]ᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul(a, &b.transpose()?)
}

/// Affine map `x[L×in] · w[in×out] + bias[out]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = matmul(x, w)?;
    match bias {
        Some(b) => add_row_bias(&y, b),
        None => Ok(y),
    }
}

/// Adds a length-`C` vector to every row of an `L × C` matrix.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, c) = x.dims2()?;
    if bias.numel() != c {
        return Err(Error::Dimension {
            op: "add_row_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Adds a per-channel constant to a `C × H × W` tensor.
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if bias.numel() != c {
        return Err(Error::Dimension {
            op: "add_channel_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    for (plane, &b) in data.chunks_exact_mut(h * w).zip(bias.data()) {
        plane.iter_mut().for_each(|v| *v += b);
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Per-channel `x * scale + shift` on a `C × H × W` tensor (inference-time
/// normalization).
pub fn channel_affine(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if scale.numel() != c || shift.numel() != c {
        return Err(Error::Dimension {
            op: "channel_affine",
            lhs: x.shape().to_vec(),
            rhs: scale.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    for (i, plane) in data.chunks_exact_mut(h * w).enumerate() {
        let (s, t) = (scale.data()[i], shift.data()[i]);
        plane.iter_mut().for_each(|v| *v = *v * s + t);
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// 2-D cross-correlation of `x[C_in×H×W]` with `w[C_out×C_in×k×k]`.
///
/// Output size is `floor((H + 2·pad − k) / stride) + 1` per spatial axis.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    conv2d_grouped(x, w, stride, pad, 1)
}

/// Grouped cross-correlation; `w` is `C_out × (C_in / groups) × k × k` and
/// output channel `o` reads input group `o / (C_out / groups)`.
pub fn conv2d_grouped(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor> {
    let (c_in, h, wd) = x.dims3()?;
    let dim_err = || Error::Dimension {
        op: "conv2d",
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    let [c_out, c_per_group, kh, kw] = w.shape()[..] else {
        return Err(dim_err());
    };
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 || c_in / groups != c_per_group {
        return Err(dim_err());
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be at least 1".into()));
    }
    if kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(dim_err());
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let out_per_group = c_out / groups;
    let patch = c_per_group * kh * kw;
    let positions = oh * ow;

    let mut out = vec![0.0f32; c_out * positions];
    let mut cols = vec![0.0f32; patch * positions];
    for g in 0..groups {
        // im2col for this group's input channels: rows = (ci, ky, kx), cols = output pixel
        cols.iter_mut().for_each(|v| *v = 0.0);
        for ci in 0..c_per_group {
            let plane = &x.data()[(g * c_per_group + ci) * h * wd..][..h * wd];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut cols[((ci * kh + ky) * kw + kx) * positions..][..positions];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * wd..][..wd];
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                row[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let kernels = &w.data()[g * out_per_group * patch..][..out_per_group * patch];
        let dst = &mut out[g * out_per_group * positions..][..out_per_group * positions];
        matmul_into(kernels, &cols, dst, out_per_group, patch, positions);
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Row-wise standardization of an `L × C` matrix: `(x − mean) / sqrt(var + eps)`
/// with the population variance. No affine transform is applied.
pub fn layernorm(x: &Tensor, eps: f32) -> Result<Tensor> {
    let (_, c) = x.dims2()?;
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(c) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
        let var = row
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / c as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for v in row.iter_mut() {
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// [`layernorm`] followed by a per-column scale and shift.
pub fn layernorm_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let (_, c) = x.dims2()?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Dimension {
            op: "layernorm_affine",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let mut data = layernorm(x, eps)?.into_data();
    for row in data.chunks_exact_mut(c) {
        for ((v, &g), &b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Softmax along `axis`, with max subtraction so large logits cannot overflow.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let n = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut data = x.data().to_vec();
    let mut buf = vec![0.0f32; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut max = f32::NEG_INFINITY;
            for j in 0..n {
                max = max.max(data[base + j * inner]);
            }
            let mut sum = 0.0f64;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = (data[base + j * inner] - max).exp();
                sum += *b as f64;
            }
            for (j, b) in buf.iter().enumerate() {
                data[base + j * inner] = (*b as f64 / sum) as f32;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Bilinear resize of `x[C×H×W]` to `C × out_h × out_w` with half-pixel
/// centers. Resizing to the input size returns an exact copy.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize target must be at least 1×1".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ys: Vec<_> = (0..out_h).map(|i| sample_axis(i, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|j| sample_axis(j, w, out_w)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in x.data().chunks_exact(h * w) {
        for &(y0, y1, ly) in &ys {
            for &(x0, x1, lx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bottom = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                out.push(top * (1.0 - ly) + bottom * ly);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Source neighbours and blend weight for output index `i` on one axis.
fn sample_axis(i: usize, input: usize, output: usize) -> (usize, usize, f32) {
    let scale = input as f32 / output as f32;
    let src = ((i as f32 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(input - 1);
    let i1 = (i0 + 1).min(input - 1);
    let lambda = if i0 == input - 1 { 0.0 } else { src - i0 as f32 };
    (i0, i1, lambda)
}

/// Exact (erf-based) GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(|v| 0.5 * v * (1.0 + libm::erff(v * std::f32::consts::FRAC_1_SQRT_2)))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Sums over `axis`, removing it. A rank-1 input reduces to shape `[1]`.
pub fn sum_over_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let n = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let src = &x.data()[(o * n + j) * inner..][..inner];
            for (d, &s) in out[o * inner..][..inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape: Vec<usize> = x.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::new(shape, out)
}

pub fn sum_of_squares(x: &Tensor) -> f64 {
    x.data().iter().map(|&v| (v as f64) * (v as f64)).sum()
}

/// Euclidean norm over all elements.
pub fn l2_norm(x: &Tensor) -> f64 {
    sum_of_squares(x).sqrt()
}
