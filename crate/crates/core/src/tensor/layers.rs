//! Eager (gradient-free) entry points to the layer vocabulary. They run the
//! same code as the recorded graph ops.

use crate::error::Result;

use super::{Graph, Tensor};

/// One of the fixed layers the denoiser is built from.
#[derive(Debug, Clone, Copy)]
pub enum Layer<'a> {
    Silu,
    GroupNorm { groups: usize },
    Softmax { axis: usize },
    Add(&'a Tensor),
    Scale(f64),
    Concat { others: &'a [Tensor], axis: usize },
}

/// Default group count for a group norm over `channels` channels: 8, or the
/// largest smaller divisor when 8 does not divide the channel count.
pub fn default_groups(channels: usize) -> usize {
    (1..=channels.clamp(1, 8))
        .rev()
        .find(|g| channels.is_multiple_of(*g))
        .unwrap_or(1)
}

pub fn apply_layer(x: &Tensor, layer: Layer<'_>) -> Result<Tensor> {
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let out = match layer {
        Layer::Silu => g.silu(xi)?,
        Layer::GroupNorm { groups } => g.group_norm(xi, groups, None, None)?,
        Layer::Softmax { axis } => g.softmax(xi, axis)?,
        Layer::Add(other) => {
            let o = g.input(other.clone());
            g.add(xi, o)?
        }
        Layer::Scale(s) => g.scale(xi, s)?,
        Layer::Concat { others, axis } => {
            let mut ids = vec![xi];
            ids.extend(others.iter().map(|t| g.input(t.clone())));
            g.concat(&ids, axis)?
        }
    };
    Ok(g.value(out).clone())
}

/// `[C_in,H,W] * [C_out,C_in,k,k] -> [C_out,H',W']` with zero padding.
pub fn conv2d(
    x: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let wi = g.input(weights.clone());
    let bi = bias.map(|b| g.input(b.clone()));
    let out = g.conv2d(xi, wi, bi, stride, padding)?;
    Ok(g.value(out).clone())
}
