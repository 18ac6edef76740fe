//! Raw forward/backward kernels on flat slices. The autodiff graph and the
//! eager layer functions both call into these.

use crate::error::{dim_err, Error, Result};

use super::Tensor;

/// Geometry of a 2-D convolution over a `[C, H, W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn from_shapes(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 3 || w.len() != 4 {
            return dim_err(format!(
                "conv2d expects x [C,H,W] and w [Co,Ci,k,k], got {x:?} and {w:?}"
            ));
        }
        if w[1] != x[0] {
            return dim_err(format!(
                "conv2d channel mismatch: input has {} channels, kernel expects {}",
                x[0], w[1]
            ));
        }
        if w[2] != w[3] {
            return dim_err(format!(
                "conv2d kernel must be square, got {}x{}",
                w[2], w[3]
            ));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if x[1] + 2 * pad < w[2] || x[2] + 2 * pad < w[2] {
            return dim_err(format!("kernel {} larger than padded input {x:?}", w[2]));
        }
        Ok(Self {
            c_in: x[0],
            h: x[1],
            w: x[2],
            c_out: w[0],
            k: w[2],
            stride,
            pad,
        })
    }

    /// Valid output-column range `[lo, hi)` for kernel column `kx`, so that
    /// `ox * stride + kx - pad` lands inside `0..w`.
    fn ox_range(&self, kx: usize, ow: usize) -> (usize, usize) {
        axis_range(kx, self.pad, self.stride, self.w, ow)
    }

    fn oy_range(&self, ky: usize, oh: usize) -> (usize, usize) {
        axis_range(ky, self.pad, self.stride, self.h, oh)
    }
}

fn axis_range(kk: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    // smallest o with o*stride + kk >= pad
    let lo = if kk >= pad {
        0
    } else {
        (pad - kk).div_ceil(stride)
    };
    // largest o with o*stride + kk - pad <= extent - 1
    let top = extent + pad - 1;
    let hi = if top < kk {
        0
    } else {
        ((top - kk) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

pub fn conv2d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let mut out = vec![0.0; g.c_out * plane];
    let kk = g.k * g.k;
    for co in 0..g.c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            dst.fill(b[co]);
        }
        for ci in 0..g.c_in {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let wk = &w[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk];
            for ky in 0..g.k {
                let (oy0, oy1) = g.oy_range(ky, oh);
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = g.ox_range(kx, ow);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let shift = kx as isize - g.pad as isize;
                            let s0 = (ox0 as isize + shift) as usize;
                            let n = ox1 - ox0;
                            for (d, s) in drow[ox0..ox1].iter_mut().zip(&row[s0..s0 + n]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                drow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let kk = g.k * g.k;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let gb: Vec<f64> = (0..g.c_out)
        .map(|co| gout[co * plane..(co + 1) * plane].iter().sum())
        .collect();
    for co in 0..g.c_out {
        let go = &gout[co * plane..(co + 1) * plane];
        for ci in 0..g.c_in {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let gsrc = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let base = (co * g.c_in + ci) * kk;
            for ky in 0..g.k {
                let (oy0, oy1) = g.oy_range(ky, oh);
                for kx in 0..g.k {
                    let wv = w[base + ky * g.k + kx];
                    let (ox0, ox1) = g.ox_range(kx, ow);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let s0 = (ox0 as isize + kx as isize - g.pad as isize) as usize;
                            let n = ox1 - ox0;
                            let row = &src[iy * g.w + s0..iy * g.w + s0 + n];
                            let grow = &grow[ox0..ox1];
                            acc += row.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                            let gr = &mut gsrc[iy * g.w + s0..iy * g.w + s0 + n];
                            for (d, s) in gr.iter_mut().zip(grow) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                acc += src[iy * g.w + ix] * grow[ox];
                                gsrc[iy * g.w + ix] += wv * grow[ox];
                            }
                        }
                    }
                    gw[base + ky * g.k + kx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

pub fn silu_grad(v: f64) -> f64 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

/// Decomposes `shape` around `axis` into `(outer, axis_len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in 0..len {
                out[at(j)] /= z;
            }
        }
    }
    out
}

pub fn softmax_backward(y: &[f64], gy: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let dot: f64 = (0..len).map(|j| y[at(j)] * gy[at(j)]).sum();
            for j in 0..len {
                gx[at(j)] = y[at(j)] * (gy[at(j)] - dot);
            }
        }
    }
    gx
}

pub const GN_EPS: f64 = 1e-5;

/// Group statistics cached by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn check_groups(channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "group norm: {channels} channels not divisible into {groups} groups"
        )));
    }
    Ok(())
}

/// Normalizes `[C, ...]` per channel group, then applies the per-channel
/// affine `gamma`, `beta` when given.
pub fn group_norm(
    x: &[f64],
    channels: usize,
    groups: usize,
    gamma: Option<&[f64]>,
    beta: Option<&[f64]>,
) -> (Vec<f64>, GroupNormCache) {
    let per_c = x.len() / channels;
    let cpg = channels / groups;
    let gsize = cpg * per_c;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; groups];
    for g in 0..groups {
        let s = &x[g * gsize..(g + 1) * gsize];
        let mean = s.iter().sum::<f64>() / gsize as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gsize as f64;
        let r = 1.0 / (var + GN_EPS).sqrt();
        rstd[g] = r;
        for (d, v) in xhat[g * gsize..(g + 1) * gsize].iter_mut().zip(s) {
            *d = (v - mean) * r;
        }
    }
    let mut out = xhat.clone();
    for c in 0..channels {
        let ga = gamma.map_or(1.0, |g| g[c]);
        let be = beta.map_or(0.0, |b| b[c]);
        for v in &mut out[c * per_c..(c + 1) * per_c] {
            *v = ga * *v + be;
        }
    }
    (out, GroupNormCache { xhat, rstd })
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn group_norm_backward(
    gout: &[f64],
    cache: &GroupNormCache,
    channels: usize,
    groups: usize,
    gamma: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let per_c = gout.len() / channels;
    let cpg = channels / groups;
    let gsize = cpg * per_c;
    let mut ggamma = vec![0.0; channels];
    let mut gbeta = vec![0.0; channels];
    let mut gxhat = vec![0.0; gout.len()];
    for c in 0..channels {
        let ga = gamma.map_or(1.0, |g| g[c]);
        let sl = c * per_c..(c + 1) * per_c;
        for ((gh, go), xh) in gxhat[sl.clone()]
            .iter_mut()
            .zip(&gout[sl.clone()])
            .zip(&cache.xhat[sl])
        {
            *gh = go * ga;
            ggamma[c] += go * xh;
            gbeta[c] += go;
        }
    }
    let mut gx = vec![0.0; gout.len()];
    let n = gsize as f64;
    for g in 0..groups {
        let sl = g * gsize..(g + 1) * gsize;
        let gh = &gxhat[sl.clone()];
        let xh = &cache.xhat[sl.clone()];
        let mean_g = gh.iter().sum::<f64>() / n;
        let mean_gx = gh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((d, a), b) in gx[sl].iter_mut().zip(gh).zip(xh) {
            *d = cache.rstd[g] * (a - mean_g - b * mean_gx);
        }
    }
    (gx, ggamma, gbeta)
}

/// Nearest-neighbour 2x upsampling of `[C, H, W]`.
pub fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[ch * oh * ow + y * ow + xx] = x[ch * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[ch * h * w + (y / 2) * w + xx / 2] += g[ch * oh * ow + y * ow + xx];
            }
        }
    }
    out
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
    let rank = first.shape().len();
    if axis >= rank {
        return dim_err(format!("concat axis {axis} out of range for rank {rank}"));
    }
    for p in parts {
        let s = p.shape();
        if s.len() != rank
            || s.iter()
                .zip(first.shape())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return dim_err(format!(
                "concat along {axis}: shapes {:?} and {:?} disagree",
                first.shape(),
                s
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Tensor::new(&shape, data)
}
