use crate::error::{dim_err, Error, Result};

use super::kernels::{self, ConvGeom, GroupNormCache};
use super::{ParamStore, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `x * s` with `s` a one-element node.
    MulScalar(NodeId, NodeId),
    /// `x[c, ..] + b[c]`.
    AddChannel(NodeId, NodeId),
    Silu(NodeId),
    GroupNorm {
        x: NodeId,
        gamma: Option<NodeId>,
        beta: Option<NodeId>,
        groups: usize,
        cache: GroupNormCache,
    },
    Softmax {
        x: NodeId,
        split: (usize, usize, usize),
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: NodeId,
        rows: usize,
        cols: usize,
    },
    Reshape(NodeId),
    Upsample2 {
        x: NodeId,
        c: usize,
        h: usize,
        w: usize,
    },
    Sum(NodeId),
    SumSquares(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A dynamic tape: every layer call evaluates eagerly and records how to
/// propagate gradients back to its inputs.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<NodeId> {
        #[cfg(debug_assertions)]
        value.check_finite(op_name(&op))?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Constant input; no gradient is accumulated for it.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records every tensor of `store` as a trainable leaf, in store order.
    pub fn bind(&mut self, store: &ParamStore) -> Vec<NodeId> {
        store
            .tensors()
            .iter()
            .map(|t| self.param(t.clone()))
            .collect()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let n = self.needs(&[a, b]);
        self.push(v, Op::Add(a, b), n)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let n = self.needs(&[a, b]);
        self.push(v, Op::Sub(a, b), n)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * s);
        let n = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), n)
    }

    /// Multiplies `x` by the one-element node `s`.
    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return dim_err(format!(
                "mul_scalar expects a one-element factor, got {:?}",
                self.shape(s)
            ));
        }
        let sv = self.value(s).item();
        let v = self.value(x).map(|a| a * sv);
        let n = self.needs(&[x, s]);
        self.push(v, Op::MulScalar(x, s), n)
    }

    /// Adds `b[c]` to every element of channel `c` of `x` (`x` is `[C, ...]`).
    pub fn add_channel(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x);
        let c = xs[0];
        if self.value(b).len() != c {
            return dim_err(format!(
                "channel broadcast: {} values for {c} channels",
                self.value(b).len()
            ));
        }
        let per = self.value(x).len() / c;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        v.clear_grad();
        for (i, val) in v.data_mut().iter_mut().enumerate() {
            *val += bv[i / per];
        }
        let n = self.needs(&[x, b]);
        self.push(v, Op::AddChannel(x, b), n)
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(kernels::silu);
        let n = self.needs(&[x]);
        self.push(v, Op::Silu(x), n)
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        groups: usize,
        gamma: Option<NodeId>,
        beta: Option<NodeId>,
    ) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let c = shape[0];
        kernels::check_groups(c, groups)?;
        for p in [gamma, beta].into_iter().flatten() {
            if self.value(p).len() != c {
                return dim_err(format!(
                    "group norm affine of length {} for {c} channels",
                    self.value(p).len()
                ));
            }
        }
        let (out, cache) = kernels::group_norm(
            self.value(x).data(),
            c,
            groups,
            gamma.map(|g| self.value(g).data()),
            beta.map(|b| self.value(b).data()),
        );
        let mut deps = vec![x];
        deps.extend(gamma);
        deps.extend(beta);
        let n = self.needs(&deps);
        self.push(
            Tensor::new(&shape, out)?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            },
            n,
        )
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let split = kernels::axis_split(&shape, axis)?;
        let out = kernels::softmax(self.value(x).data(), split.0, split.1, split.2);
        let n = self.needs(&[x]);
        self.push(Tensor::new(&shape, out)?, Op::Softmax { x, split }, n)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat(&tensors, axis)?;
        let n = self.needs(parts);
        self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            n,
        )
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let geom = ConvGeom::from_shapes(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.value(b).len() != geom.c_out {
                return dim_err(format!(
                    "conv2d bias of length {} for {} output channels",
                    self.value(b).len(),
                    geom.c_out
                ));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let n = self.needs(&deps);
        self.push(
            Tensor::new(&[geom.c_out, geom.out_h(), geom.out_w()], out)?,
            Op::Conv2d { x, w, b, geom },
            n,
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul of {sa:?} and {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.needs(&[a, b]);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, m, k, n }, ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 {
            return dim_err(format!("transpose expects a matrix, got {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let out = kernels::transpose(self.value(a).data(), rows, cols);
        let n = self.needs(&[a]);
        self.push(
            Tensor::new(&[cols, rows], out)?,
            Op::Transpose { a, rows, cols },
            n,
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let mut v = self.value(a).clone().reshape(shape)?;
        v.clear_grad();
        let n = self.needs(&[a]);
        self.push(v, Op::Reshape(a), n)
    }

    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return dim_err(format!("upsample expects [C,H,W], got {s:?}"));
        }
        let out = kernels::upsample2(self.value(x).data(), s[0], s[1], s[2]);
        let n = self.needs(&[x]);
        self.push(
            Tensor::new(&[s[0], 2 * s[1], 2 * s[2]], out)?,
            Op::Upsample2 {
                x,
                c: s[0],
                h: s[1],
                w: s[2],
            },
            n,
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).sum());
        let n = self.needs(&[x]);
        self.push(v, Op::Sum(x), n)
    }

    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).sq_norm());
        let n = self.needs(&[x]);
        self.push(v, Op::SumSquares(x), n)
    }

    /// Reverse sweep from a one-element `loss`, filling gradients for every
    /// node that depends on a trainable leaf.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `id`, if any flowed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Copies gradients of `bound` leaves into the matching store tensors;
    /// leaves that received no gradient get zeros.
    pub fn write_grads(&self, bound: &[NodeId], store: &mut ParamStore) -> Result<()> {
        if bound.len() != store.len() {
            return Err(Error::State(format!(
                "{} bound leaves for {} parameters",
                bound.len(),
                store.len()
            )));
        }
        for (id, t) in bound.iter().zip(store.tensors_mut()) {
            let g = self
                .grad(*id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()]);
            t.set_grad(g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |id: NodeId, contrib: &[f64]| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(buf) => buf.iter_mut().zip(contrib).for_each(|(b, c)| *b += c),
                slot @ None => *slot = Some(contrib.to_vec()),
            }
        };
        let val = |id: NodeId| self.nodes[id.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g);
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                acc(*b, &neg);
            }
            Op::Scale(a, s) => {
                let d: Vec<f64> = g.iter().map(|v| v * s).collect();
                acc(*a, &d);
            }
            Op::MulScalar(x, s) => {
                let sv = val(*s)[0];
                let dx: Vec<f64> = g.iter().map(|v| v * sv).collect();
                let ds: f64 = g.iter().zip(val(*x)).map(|(a, b)| a * b).sum();
                acc(*x, &dx);
                acc(*s, &[ds]);
            }
            Op::AddChannel(x, b) => {
                acc(*x, g);
                let c = self.nodes[b.0].value.len();
                let per = g.len() / c;
                let db: Vec<f64> = (0..c)
                    .map(|ch| g[ch * per..(ch + 1) * per].iter().sum())
                    .collect();
                acc(*b, &db);
            }
            Op::Silu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(*x))
                    .map(|(gv, xv)| gv * kernels::silu_grad(*xv))
                    .collect();
                acc(*x, &d);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            } => {
                let c = self.nodes[x.0].value.shape()[0];
                let (gx, gg, gb) =
                    kernels::group_norm_backward(g, cache, c, *groups, gamma.map(val));
                acc(*x, &gx);
                if let Some(gm) = gamma {
                    acc(*gm, &gg);
                }
                if let Some(bt) = beta {
                    acc(*bt, &gb);
                }
            }
            Op::Softmax { x, split } => {
                let y = self.nodes[i].value.data();
                let d = kernels::softmax_backward(y, g, split.0, split.1, split.2);
                acc(*x, &d);
            }
            Op::Concat { parts, axis } => {
                let shape = self.nodes[i].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let chunk = self.nodes[p.0].value.shape()[*axis] * inner;
                    let mut d = Vec::with_capacity(chunk * outer);
                    for o in 0..outer {
                        d.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
                    }
                    acc(*p, &d);
                    offset += chunk;
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv2d_backward(val(*x), val(*w), g, geom);
                acc(*x, &gx);
                acc(*w, &gw);
                if let Some(b) = b {
                    acc(*b, &gb);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                // dA = G B^T, dB = A^T G
                let bt = kernels::transpose(val(*b), *k, *n);
                let da = kernels::matmul(g, &bt, *m, *n, *k);
                let at = kernels::transpose(val(*a), *m, *k);
                let db = kernels::matmul(&at, g, *k, *m, *n);
                acc(*a, &da);
                acc(*b, &db);
            }
            Op::Transpose { a, rows, cols } => {
                let d = kernels::transpose(g, *cols, *rows);
                acc(*a, &d);
            }
            Op::Reshape(a) => acc(*a, g),
            Op::Upsample2 { x, c, h, w } => {
                let d = kernels::upsample2_backward(g, *c, *h, *w);
                acc(*x, &d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.nodes[x.0].value.len()];
                acc(*x, &d);
            }
            Op::SumSquares(x) => {
                let d: Vec<f64> = val(*x).iter().map(|v| 2.0 * v * g[0]).collect();
                acc(*x, &d);
            }
        }
    }
}

#[cfg(debug_assertions)]
fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Scale(..) => "scale",
        Op::MulScalar(..) => "mul_scalar",
        Op::AddChannel(..) => "add_channel",
        Op::Silu(..) => "silu",
        Op::GroupNorm { .. } => "group_norm",
        Op::Softmax { .. } => "softmax",
        Op::Concat { .. } => "concat",
        Op::Conv2d { .. } => "conv2d",
        Op::MatMul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Reshape(..) => "reshape",
        Op::Upsample2 { .. } => "upsample2",
        Op::Sum(..) => "sum",
        Op::SumSquares(..) => "sum_squares",
    }
}
