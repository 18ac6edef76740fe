//! The conditional U-shaped denoiser `f(x_t, t, y, d)`.
//!
//! The timestep `t` and the physical condition `d` are sinusoidally encoded
//! and lifted by two small MLPs to `E_t` (three times the encoding width) and
//! `E_d` (same width). Their concatenation `E` feeds every residual block;
//! `E_t` and `E_d` separately key the two cross-attention branches of the
//! bottleneck attention block. The canvas `y` is stacked with `x_t` as a
//! second input channel.

pub mod blocks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, NodeId, ParamStore, Tensor};

use blocks::{AttentionBlock, AttentionBlockOut, Conv, Init, Mlp, Norm, ParamBuilder, ResBlock};

pub const DEFAULT_PERIOD: f64 = 10_000.0;

/// Sinusoidal encoding of a scalar into `dim` values: cosines in the first
/// half, sines in the second, at geometric frequencies
/// `ω_i = P^(−(i−1)/(dim/2))`, `i = 1..dim/2`.
pub fn sinusoidal_encode(v: f64, dim: usize, period: f64) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "sinusoidal encoding width must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| period.powf(-(i as f64) / half as f64))
        .collect();
    let mut out = Vec::with_capacity(dim);
    out.extend(freqs.iter().map(|w| (v * w).cos()));
    out.extend(freqs.iter().map(|w| (v * w).sin()));
    Ok(out)
}

/// Parameters that never receive gradient: the query and key projections of
/// the single-key cross-attention branches and the norm feeding their
/// queries. The softmax over one key is identically 1.
pub fn is_inert_parameter(name: &str) -> bool {
    name.contains(".cab_") && [".q.", ".k.", ".norm."].iter().any(|s| name.contains(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub height: usize,
    pub width: usize,
    /// Number of resolution levels; the attention block sits at the deepest.
    pub depth: usize,
    /// Channels at the first level, doubled at each deeper level.
    pub base_width: usize,
    /// Sinusoidal width for `t`; `E_t` is three times this.
    pub time_enc_dim: usize,
    /// Sinusoidal width for `d`; `E_d` has the same width.
    pub cond_enc_dim: usize,
    pub period: f64,
    pub init_seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            depth: 3,
            base_width: 32,
            time_enc_dim: 32,
            cond_enc_dim: 32,
            period: DEFAULT_PERIOD,
            init_seed: 0,
        }
    }
}

impl UNetConfig {
    /// Depth-2, width-16 network on 32×64 inputs.
    pub fn toy() -> Self {
        Self {
            height: 32,
            width: 64,
            depth: 2,
            base_width: 16,
            ..Self::default()
        }
    }

    pub fn time_dim(&self) -> usize {
        3 * self.time_enc_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_enc_dim
    }

    pub fn emb_dim(&self) -> usize {
        self.time_dim() + self.cond_dim()
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("network depth must be at least 1".into()));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base width must be positive".into()));
        }
        for (name, d) in [
            ("time", self.time_enc_dim),
            ("condition", self.cond_enc_dim),
        ] {
            if d == 0 || d % 2 != 0 {
                return Err(Error::Config(format!(
                    "{name} encoding width must be even and positive, got {d}"
                )));
            }
        }
        let f = 1usize << (self.depth - 1);
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return Err(Error::Config(format!(
                "resolution {}x{} must be divisible by {f} for depth {}",
                self.height, self.width, self.depth
            )));
        }
        Ok(())
    }
}

/// Encodings and embeddings of the global conditions for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    pub enc_t: Vec<f64>,
    pub enc_d: Vec<f64>,
    pub e_t: Vec<f64>,
    pub e_d: Vec<f64>,
    /// `E_t` followed by `E_d`.
    pub e: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct EmbeddingNodes {
    e_t: NodeId,
    e_d: NodeId,
    e: NodeId,
}

#[derive(Debug, Clone)]
struct Layout {
    mlp_t: Mlp,
    mlp_d: Mlp,
    conv_in: Conv,
    enc: Vec<ResBlock>,
    down: Vec<Conv>,
    attn: AttentionBlock,
    up: Vec<Conv>,
    dec: Vec<ResBlock>,
    norm_out: Norm,
    conv_out: Conv,
}

/// The denoiser: weights plus the block layout that indexes them.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    config: UNetConfig,
    params: ParamStore,
    layout: Layout,
}

impl DenoiserModel {
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let emb = config.emb_dim();
        let mlp_t = Mlp::build(&mut b, "mlp_t", config.time_enc_dim, config.time_dim())?;
        let mlp_d = Mlp::build(&mut b, "mlp_d", config.cond_enc_dim, config.cond_dim())?;
        let conv_in = b.conv("conv_in", 2, config.base_width, 3, Init::He)?;
        let mut enc = Vec::new();
        let mut down = Vec::new();
        let mut c_prev = config.base_width;
        for l in 0..config.depth {
            let c = config.level_width(l);
            enc.push(ResBlock::build(&mut b, &format!("enc{l}"), c_prev, c, emb)?);
            if l + 1 < config.depth {
                down.push(b.conv(&format!("down{l}"), c, c, 3, Init::He)?);
            }
            c_prev = c;
        }
        let deep = config.level_width(config.depth - 1);
        let attn =
            AttentionBlock::build(&mut b, "attn", deep, config.time_dim(), config.cond_dim())?;
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in (0..config.depth - 1).rev() {
            let c = config.level_width(l);
            up.push(b.conv(&format!("up{l}"), config.level_width(l + 1), c, 3, Init::He)?);
            dec.push(ResBlock::build(&mut b, &format!("dec{l}"), 2 * c, c, emb)?);
        }
        let norm_out = b.norm("norm_out", config.base_width)?;
        let conv_out = b.conv("conv_out", config.base_width, 1, 3, Init::Zeros)?;
        Ok(Self {
            config,
            params,
            layout: Layout {
                mlp_t,
                mlp_d,
                conv_in,
                enc,
                down,
                attn,
                up,
                dec,
                norm_out,
                conv_out,
            },
        })
    }

    /// Rebuilds the layout for `config` and installs `params`, which must
    /// match the freshly built parameter names and shapes.
    pub fn from_params(config: UNetConfig, params: ParamStore) -> Result<Self> {
        let mut m = Self::new(config)?;
        if m.params.names() != params.names() {
            return Err(Error::Data(
                "parameter names do not match the network layout".into(),
            ));
        }
        for ((name, a), b) in m.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Data(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn attention_block(&self) -> &AttentionBlock {
        &self.layout.attn
    }

    pub fn res_blocks(&self) -> impl Iterator<Item = &ResBlock> {
        self.layout.enc.iter().chain(&self.layout.dec)
    }

    fn embed_nodes(&self, g: &mut Graph, p: &[NodeId], t: usize, d: f64) -> Result<EmbeddingNodes> {
        let c = &self.config;
        let enc_t = sinusoidal_encode(t as f64, c.time_enc_dim, c.period)?;
        let enc_d = sinusoidal_encode(d, c.cond_enc_dim, c.period)?;
        let it = g.input(Tensor::new(&[enc_t.len()], enc_t)?);
        let id = g.input(Tensor::new(&[enc_d.len()], enc_d)?);
        let e_t = self.layout.mlp_t.apply(g, p, it)?;
        let e_d = self.layout.mlp_d.apply(g, p, id)?;
        let e = g.concat(&[e_t, e_d], 0)?;
        Ok(EmbeddingNodes { e_t, e_d, e })
    }

    /// Evaluates the condition embeddings for `(t, d)`.
    pub fn embed_conditions(&self, t: usize, d: f64) -> Result<ConditionEmbedding> {
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g);
        let n = self.embed_nodes(&mut g, &p, t, d)?;
        let c = &self.config;
        Ok(ConditionEmbedding {
            enc_t: sinusoidal_encode(t as f64, c.time_enc_dim, c.period)?,
            enc_d: sinusoidal_encode(d, c.cond_enc_dim, c.period)?,
            e_t: g.value(n.e_t).data().to_vec(),
            e_d: g.value(n.e_d).data().to_vec(),
            e: g.value(n.e).data().to_vec(),
        })
    }

    fn bind_frozen(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params
            .tensors()
            .iter()
            .map(|t| g.input(t.clone()))
            .collect()
    }

    /// Full forward pass that also returns the attention-block intermediates.
    pub fn forward_traced(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        x_t: NodeId,
        t: usize,
        y: NodeId,
        d: f64,
    ) -> Result<(NodeId, AttentionBlockOut)> {
        let c = &self.config;
        let expect = [1, c.height, c.width];
        for (name, id) in [("x_t", x_t), ("y", y)] {
            if g.shape(id) != expect {
                return dim_err(format!(
                    "{name} has shape {:?}, the model expects {expect:?}",
                    g.shape(id)
                ));
            }
        }
        let emb = self.embed_nodes(g, p, t, d)?;
        let l = &self.layout;
        let x = g.concat(&[x_t, y], 0)?;
        let mut h = l.conv_in.apply(g, p, x)?;
        let mut skips = Vec::new();
        for (i, rb) in l.enc.iter().enumerate() {
            h = rb.forward(g, p, h, emb.e)?;
            if let Some(down) = l.down.get(i) {
                skips.push(h);
                h = down.apply_strided(g, p, h, 2)?;
            }
        }
        let ab = l.attn.forward(g, p, h, emb.e_t, emb.e_d)?;
        h = ab.fuse.out;
        for (up, rb) in l.up.iter().zip(&l.dec) {
            h = g.upsample2(h)?;
            h = up.apply(g, p, h)?;
            let skip = skips.pop().expect("one skip per decoder level");
            h = g.concat(&[h, skip], 0)?;
            h = rb.forward(g, p, h, emb.e)?;
        }
        h = l.norm_out.apply(g, p, h)?;
        h = g.silu(h)?;
        let out = l.conv_out.apply(g, p, h)?;
        Ok((out, ab))
    }

    pub fn denoise(&self, x_t: &Tensor, t: usize, y: &Tensor, d: f64) -> Result<Tensor> {
        self.predict(x_t, t, y, d)
    }
}

impl Denoiser for DenoiserModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        x_t: NodeId,
        t: usize,
        y: NodeId,
        d: f64,
    ) -> Result<NodeId> {
        self.forward_traced(g, p, x_t, t, y, d).map(|(out, _)| out)
    }

    fn resolution(&self) -> Option<(usize, usize)> {
        Some((self.config.height, self.config.width))
    }
}
