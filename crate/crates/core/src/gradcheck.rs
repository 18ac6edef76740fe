//! Central finite-difference checks of the training-loss gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{training_loss, Denoiser, Parameterization};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// One fixed loss evaluation: clean image, canvas, condition, step, noise.
#[derive(Debug, Clone)]
pub struct LossPoint<'a> {
    pub x0: &'a Tensor,
    pub y: &'a Tensor,
    pub d: f64,
    pub t: usize,
    pub eps: &'a Tensor,
    pub sched: &'a NoiseSchedule,
    pub param: Parameterization,
}

impl LossPoint<'_> {
    pub fn loss<M: Denoiser + ?Sized>(&self, model: &M) -> Result<f64> {
        Ok(training_loss(
            model, self.x0, self.y, self.d, self.t, self.eps, self.sched, self.param,
        )?
        .value())
    }

    /// Loss and the gradient of every parameter, in store order.
    pub fn gradients<M: Denoiser + ?Sized>(&self, model: &M) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut store = model.params().clone();
        let tape = training_loss(
            model, self.x0, self.y, self.d, self.t, self.eps, self.sched, self.param,
        )?;
        let loss = tape.backward_into(&mut store)?;
        let grads = store
            .tensors()
            .iter()
            .map(|t| t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// `|a − n| / max(|a|, |n|)`, 0 when both vanish.
pub fn relative_error(a: f64, n: f64) -> f64 {
    let s = a.abs().max(n.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - n).abs() / s
    }
}

/// Compares analytic gradients with `(L(θ+h) − L(θ−h))/2h` at the given
/// `(parameter, element)` positions. The model is restored afterwards.
pub fn check_gradients<M: Denoiser + ?Sized>(
    model: &mut M,
    point: &LossPoint<'_>,
    picks: &[(usize, usize)],
    h: f64,
) -> Result<Vec<GradSample>> {
    let (_, grads) = point.gradients(&*model)?;
    let mut out = Vec::with_capacity(picks.len());
    for &(p, i) in picks {
        let len = model.params().tensors().get(p).map(Tensor::len);
        if len.is_none_or(|n| i >= n) {
            return Err(Error::Index {
                what: "gradient-check element",
                index: i,
                lo: 0,
                hi: len.unwrap_or(0).saturating_sub(1),
            });
        }
        let orig = model.params().tensors()[p].data()[i];
        model.params_mut().tensors_mut()[p].data_mut()[i] = orig + h;
        let up = point.loss(&*model);
        model.params_mut().tensors_mut()[p].data_mut()[i] = orig - h;
        let down = point.loss(&*model);
        model.params_mut().tensors_mut()[p].data_mut()[i] = orig;
        let numeric = (up? - down?) / (2.0 * h);
        let analytic = grads[p][i];
        out.push(GradSample {
            param: model.params().names()[p].clone(),
            index: i,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(out)
}

/// `n` distinct positions drawn uniformly over all elements of the
/// parameters accepted by `keep`.
pub fn random_picks<M: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &M,
    n: usize,
    keep: impl Fn(&str) -> bool,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let pool: Vec<(usize, usize)> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, (name, _))| keep(name))
        .flat_map(|(p, (_, t))| (0..t.len()).map(move |i| (p, i)))
        .collect();
    rand::seq::index::sample(rng, pool.len(), n.min(pool.len()))
        .into_iter()
        .map(|k| pool[k])
        .collect()
}
