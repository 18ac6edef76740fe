//! Building blocks of the denoiser. Each block records the indices of its
//! parameters inside the owning [`ParamStore`] and evaluates on a [`Graph`]
//! given the bound parameter leaves.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{default_groups, Graph, NodeId, ParamStore, Tensor};

/// How a freshly created weight tensor is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `N(0, 2/fan_in)`.
    He,
    Zeros,
    Ones,
    Const(f64),
}

/// Pushes named parameters into a store while building blocks.
pub struct ParamBuilder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<'a, R: Rng> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self { store, rng }
    }

    pub fn tensor(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        init: Init,
    ) -> Result<usize> {
        let t = match init {
            Init::He => {
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(shape, |_| normal.sample(self.rng))
            }
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Const(v) => Tensor::filled(shape, v),
        };
        self.store.push(name, t)
    }

    pub fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        init: Init,
    ) -> Result<Conv> {
        Ok(Conv {
            w: self.tensor(
                &format!("{name}.w"),
                &[c_out, c_in, k, k],
                c_in * k * k,
                init,
            )?,
            b: self.tensor(&format!("{name}.b"), &[c_out], 1, Init::Zeros)?,
            k,
        })
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.tensor(&format!("{name}.gamma"), &[channels], 1, Init::Ones)?,
            beta: self.tensor(&format!("{name}.beta"), &[channels], 1, Init::Zeros)?,
            groups: default_groups(channels),
        })
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.tensor(&format!("{name}.w"), &[d_out, d_in], d_in, Init::He)?,
            b: self.tensor(&format!("{name}.b"), &[d_out], 1, Init::Zeros)?,
        })
    }
}

/// Convolution with bias; 3×3 kernels use "same" zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub k: usize,
}

impl Conv {
    pub fn apply(&self, g: &mut Graph, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        g.conv2d(x, p[self.w], Some(p[self.b]), 1, self.k / 2)
    }

    pub fn apply_strided(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        x: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        g.conv2d(x, p[self.w], Some(p[self.b]), stride, self.k / 2)
    }

    /// Pointwise convolution of a vector `[D]` viewed as `[D, 1, 1]`;
    /// returns `[C_out, 1, 1]`.
    pub fn apply_vector(&self, g: &mut Graph, p: &[NodeId], v: NodeId) -> Result<NodeId> {
        let d = g.value(v).len();
        let v3 = g.reshape(v, &[d, 1, 1])?;
        self.apply(g, p, v3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub groups: usize,
}

impl Norm {
    pub fn apply(&self, g: &mut Graph, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        g.group_norm(x, self.groups, Some(p[self.gamma]), Some(p[self.beta]))
    }
}

/// `W x + b` on a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn apply(&self, g: &mut Graph, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let n = g.value(x).len();
        let col = g.reshape(x, &[n, 1])?;
        let y = g.matmul(p[self.w], col)?;
        let m = g.shape(y)[0];
        let y = g.reshape(y, &[m])?;
        g.add(y, p[self.b])
    }
}

/// Two-layer perceptron `linear → SiLU → linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            l1: b.linear(&format!("{name}.l1"), d_in, d_out)?,
            l2: b.linear(&format!("{name}.l2"), d_out, d_out)?,
        })
    }

    pub fn apply(&self, g: &mut Graph, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = self.l1.apply(g, p, x)?;
        let h = g.silu(h)?;
        self.l2.apply(g, p, h)
    }
}

/// Residual block. Feature path `GN → SiLU → 3×3 conv`, embedding path
/// `SiLU → pointwise conv` broadcast over space, plus a skip connection
/// (1×1 projection when the channel count changes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResBlock {
    pub norm: Norm,
    pub conv: Conv,
    pub emb: Conv,
    pub skip: Option<Conv>,
    pub c_in: usize,
    pub c_out: usize,
}

impl ResBlock {
    pub fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        emb_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: b.norm(&format!("{name}.norm"), c_in)?,
            conv: b.conv(&format!("{name}.conv"), c_in, c_out, 3, Init::He)?,
            emb: b.conv(&format!("{name}.emb"), emb_dim, c_out, 1, Init::He)?,
            skip: if c_in == c_out {
                None
            } else {
                Some(b.conv(&format!("{name}.skip"), c_in, c_out, 1, Init::He)?)
            },
            c_in,
            c_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[NodeId], m: NodeId, e: NodeId) -> Result<NodeId> {
        let h = self.norm.apply(g, p, m)?;
        let h = g.silu(h)?;
        let h = self.conv.apply(g, p, h)?;
        let es = g.silu(e)?;
        let ev = self.emb.apply_vector(g, p, es)?;
        let ev = g.reshape(ev, &[self.c_out])?;
        let h = g.add_channel(h, ev)?;
        let skip = match &self.skip {
            Some(s) => s.apply(g, p, m)?,
            None => m,
        };
        g.add(skip, h)
    }
}

/// Nodes produced by an attention evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionOut {
    /// Block output.
    pub out: NodeId,
    /// Softmax weights `[HW, keys]`, one probability row per query.
    pub probs: NodeId,
    /// `V · probsᵀ` reshaped to `[C, H, W]`, before the output convolution.
    pub pre_conv: NodeId,
}

/// `V · softmax(QᵀK/√C)ᵀ` for `Q: [C, HW]`, `K, V: [C, N]`.
fn attend(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, c: usize) -> Result<(NodeId, NodeId)> {
    let qt = g.transpose(q)?;
    let scores = g.matmul(qt, k)?;
    let scores = g.scale(scores, 1.0 / (c as f64).sqrt())?;
    let probs = g.softmax(scores, 1)?;
    let pt = g.transpose(probs)?;
    let att = g.matmul(v, pt)?;
    Ok((att, probs))
}

/// Self-attention over spatial positions with a residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfAttention {
    pub norm: Norm,
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub out: Conv,
    pub channels: usize,
}

impl SelfAttention {
    pub fn build<R: Rng>(b: &mut ParamBuilder<'_, R>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            norm: b.norm(&format!("{name}.norm"), c)?,
            q: b.conv(&format!("{name}.q"), c, c, 1, Init::He)?,
            k: b.conv(&format!("{name}.k"), c, c, 1, Init::He)?,
            v: b.conv(&format!("{name}.v"), c, c, 1, Init::He)?,
            out: b.conv(&format!("{name}.out"), c, c, 1, Init::He)?,
            channels: c,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[NodeId], m: NodeId) -> Result<AttentionOut> {
        let shape = g.shape(m).to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let n = self.norm.apply(g, p, m)?;
        let proj = |conv: &Conv, g: &mut Graph| -> Result<NodeId> {
            let t = conv.apply(g, p, n)?;
            g.reshape(t, &[c, hw])
        };
        let q = proj(&self.q, g)?;
        let k = proj(&self.k, g)?;
        let v = proj(&self.v, g)?;
        let (att, probs) = attend(g, q, k, v, c)?;
        let pre_conv = g.reshape(att, &shape)?;
        let o = self.out.apply(g, p, pre_conv)?;
        let out = g.add(o, m)?;
        Ok(AttentionOut {
            out,
            probs,
            pre_conv,
        })
    }
}

/// Cross-attention: queries from the feature map, a single key/value column
/// from a condition embedding. No residual connection.
///
/// With one key the softmax is identically 1, so the query and key
/// projections (and the norm feeding the queries) never receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossAttention {
    pub norm: Norm,
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub out: Conv,
    pub channels: usize,
}

impl CrossAttention {
    pub fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        c: usize,
        emb_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: b.norm(&format!("{name}.norm"), c)?,
            q: b.conv(&format!("{name}.q"), c, c, 1, Init::He)?,
            k: b.conv(&format!("{name}.k"), emb_dim, c, 1, Init::He)?,
            v: b.conv(&format!("{name}.v"), emb_dim, c, 1, Init::He)?,
            out: b.conv(&format!("{name}.out"), c, c, 1, Init::He)?,
            channels: c,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        m: NodeId,
        e: NodeId,
    ) -> Result<AttentionOut> {
        let shape = g.shape(m).to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let n = self.norm.apply(g, p, m)?;
        let q = self.q.apply(g, p, n)?;
        let q = g.reshape(q, &[c, hw])?;
        let k = self.k.apply_vector(g, p, e)?;
        let k = g.reshape(k, &[c, 1])?;
        let v = self.v.apply_vector(g, p, e)?;
        let v = g.reshape(v, &[c, 1])?;
        let (att, probs) = attend(g, q, k, v, c)?;
        let pre_conv = g.reshape(att, &shape)?;
        let out = self.out.apply(g, p, pre_conv)?;
        Ok(AttentionOut {
            out,
            probs,
            pre_conv,
        })
    }
}

/// Weighted sum of the self-attention output and the two cross-attention
/// outputs with learnable scalar weights, followed by `GN → SiLU → 3×3 conv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParallelFusion {
    pub weights: [usize; 3],
    pub norm: Norm,
    pub conv: Conv,
}

/// Nodes produced by [`ParallelFusion::forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionOut {
    pub fused: NodeId,
    pub out: NodeId,
}

impl ParallelFusion {
    pub fn build<R: Rng>(b: &mut ParamBuilder<'_, R>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            weights: [
                b.tensor(&format!("{name}.w1"), &[1], 1, Init::Ones)?,
                b.tensor(&format!("{name}.w2"), &[1], 1, Init::Ones)?,
                b.tensor(&format!("{name}.w3"), &[1], 1, Init::Ones)?,
            ],
            norm: b.norm(&format!("{name}.norm"), c)?,
            conv: b.conv(&format!("{name}.conv"), c, c, 3, Init::He)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        o_s: NodeId,
        o_t: NodeId,
        o_d: NodeId,
    ) -> Result<FusionOut> {
        let a = g.mul_scalar(o_s, p[self.weights[0]])?;
        let b = g.mul_scalar(o_t, p[self.weights[1]])?;
        let c = g.mul_scalar(o_d, p[self.weights[2]])?;
        let ab = g.add(a, b)?;
        let fused = g.add(ab, c)?;
        let h = self.norm.apply(g, p, fused)?;
        let h = g.silu(h)?;
        let out = self.conv.apply(g, p, h)?;
        Ok(FusionOut { fused, out })
    }
}

/// Self-attention followed by the parallel cross-attention fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionBlock {
    pub sab: SelfAttention,
    pub cab_t: CrossAttention,
    pub cab_d: CrossAttention,
    pub fuse: ParallelFusion,
}

/// Every intermediate of one attention block evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionBlockOut {
    pub sab: AttentionOut,
    pub cab_t: AttentionOut,
    pub cab_d: AttentionOut,
    pub fuse: FusionOut,
}

impl AttentionBlock {
    pub fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        c: usize,
        dim_t: usize,
        dim_d: usize,
    ) -> Result<Self> {
        Ok(Self {
            sab: SelfAttention::build(b, &format!("{name}.sab"), c)?,
            cab_t: CrossAttention::build(b, &format!("{name}.cab_t"), c, dim_t)?,
            cab_d: CrossAttention::build(b, &format!("{name}.cab_d"), c, dim_d)?,
            fuse: ParallelFusion::build(b, &format!("{name}.pcab"), c)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        m: NodeId,
        e_t: NodeId,
        e_d: NodeId,
    ) -> Result<AttentionBlockOut> {
        let sab = self.sab.forward(g, p, m)?;
        let cab_t = self.cab_t.forward(g, p, sab.out, e_t)?;
        let cab_d = self.cab_d.forward(g, p, sab.out, e_d)?;
        let fuse = self.fuse.forward(g, p, sab.out, cab_t.out, cab_d.out)?;
        Ok(AttentionBlockOut {
            sab,
            cab_t,
            cab_d,
            fuse,
        })
    }
}
