//! Brute-force reference implementations used as test oracles. They are
//! written for clarity, in f64, and share no code with the library kernels.
#![allow(dead_code)]

use std::collections::BTreeMap;

use tvt_core::model::StudentModel;
use tvt_core::proxy::RawMetrics;
use tvt_core::tensor::Tensor;
use tvt_core::Rng;

pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| (rng.unit() * 2.0 - 1.0) as f32)
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

/// `a[m×k] · b[k×n]` by the textbook triple loop.
pub fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] as f64 * b[t * n + j] as f64;
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Direct grouped cross-correlation, one output pixel at a time with
/// explicit zero padding.
pub fn naive_conv2d(
    x: &[f32],
    (c_in, h, w): (usize, usize, usize),
    k: &[f32],
    (c_out, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let cpg = c_in / groups;
    let opg = c_out / groups;
    let at = |c: usize, y: i64, xx: i64| -> f64 {
        if y < 0 || xx < 0 || y >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            x[(c * h + y as usize) * w + xx as usize] as f64
        }
    };
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        let g = o / opg;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for ci in 0..cpg {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * stride + ky) as i64 - pad as i64;
                            let xx = (ox * stride + kx) as i64 - pad as i64;
                            let wv = k[((o * cpg + ci) * kh + ky) * kw + kx] as f64;
                            s += wv * at(g * cpg + ci, y, xx);
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    (out, oh, ow)
}

/// Half-pixel-center bilinear interpolation evaluated independently per
/// output pixel: map the pixel center back to input coordinates, clamp to
/// the valid range and blend the four neighbours.
pub fn naive_bilinear(x: &[f32], (c, h, w): (usize, usize, usize), oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, inp: usize, out: usize| -> f64 {
        let s = (o as f64 + 0.5) * inp as f64 / out as f64 - 0.5;
        s.clamp(0.0, (inp - 1) as f64)
    };
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let px = |y: usize, xx: usize| x[(ch * h + y) * w + xx] as f64;
        for oy in 0..oh {
            let sy = coord(oy, h, oh);
            let (y0, y1) = (sy.floor() as usize, (sy.floor() as usize + 1).min(h - 1));
            let fy = sy - sy.floor();
            for ox in 0..ow {
                let sx = coord(ox, w, ow);
                let (x0, x1) = (sx.floor() as usize, (sx.floor() as usize + 1).min(w - 1));
                let fx = sx - sx.floor();
                let v = px(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + px(y0, x1) * (1.0 - fy) * fx
                    + px(y1, x0) * fy * (1.0 - fx)
                    + px(y1, x1) * fy * fx;
                out.push(v);
            }
        }
    }
    out
}

/// Sum of squares over channels, then divided by the L2 norm of the grid.
pub fn naive_attention_map(feat: &[f32], c: usize, hw: usize) -> Vec<f64> {
    let mut m = vec![0.0; hw];
    for ch in 0..c {
        for (i, v) in m.iter_mut().enumerate() {
            let f = feat[ch * hw + i] as f64;
            *v += f * f;
        }
    }
    let n = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return m;
    }
    m.iter().map(|v| v / n).collect()
}

/// Capability metric recomputed from the raw weight map: tensors are
/// grouped by the block prefix of their name, every weight matrix of a
/// group (not biases, norms or embeddings) is flattened into one vector,
/// and the group norms are summed.
pub fn flatten_capability_oracle(m: &StudentModel) -> f64 {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, t) in m.weights() {
        if !name.ends_with(".weight") || name.contains("norm") {
            continue;
        }
        let parts: Vec<&str> = name.split('.').collect();
        let key = match parts[0] {
            "blocks" | "pools" => format!("{}.{}", parts[0], parts[1]),
            other => other.to_string(),
        };
        groups
            .entry(key)
            .or_default()
            .extend(t.data().iter().map(|&v| v as f64));
    }
    groups
        .values()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum()
}

/// `alpha · minmax(m_s) + beta · minmax(m_t)` written out directly.
pub fn hand_tvt(metrics: &[RawMetrics], alpha: f64, beta: f64) -> Vec<f64> {
    let norm = |v: Vec<f64>| -> Vec<f64> {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            vec![0.0; v.len()]
        } else {
            v.iter().map(|x| (x - lo) / (hi - lo)).collect()
        }
    };
    let s = norm(metrics.iter().map(|m| m.m_s).collect());
    let t = norm(metrics.iter().map(|m| m.m_t).collect());
    s.iter().zip(&t).map(|(a, b)| alpha * a + beta * b).collect()
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Tau-b by counting every pair.
pub fn brute_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut p, mut q, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).unwrap();
            let dy = y[i].partial_cmp(&y[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                (a, b) if a == b => p += 1,
                _ => q += 1,
            }
        }
    }
    let denom = ((p + q + tx) as f64) * ((p + q + ty) as f64);
    if denom == 0.0 {
        return None;
    }
    Some((p - q) as f64 / denom.sqrt())
}
