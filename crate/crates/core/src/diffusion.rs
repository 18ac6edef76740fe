//! Forward noising, the tractable posterior, the reverse transition and the
//! training objective.
//!
//! The reverse transition is `N(μ_θ, β̃_t I)` where `μ_θ` is the posterior
//! mean evaluated at the model's clean-image estimate. In noise-prediction
//! mode the estimate is recovered from the predicted noise first; both routes
//! give the same mean.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::schedule::{NoiseSchedule, StepCoeffs};
use crate::tensor::AdamState;
use crate::tensor::{gaussian_like, Graph, NodeId, ParamStore, Tensor};

/// What the denoiser network is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// The clean image `x_0`.
    #[default]
    PredictX0,
    /// The injected noise `ε`.
    PredictEps,
}

impl std::str::FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predict-x0" | "x0" => Ok(Self::PredictX0),
            "predict-eps" | "eps" => Ok(Self::PredictEps),
            other => Err(Error::Config(format!("unknown parameterization {other:?}"))),
        }
    }
}

impl std::fmt::Display for Parameterization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PredictX0 => "predict-x0",
            Self::PredictEps => "predict-eps",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub parameterization: Parameterization,
    /// Clip each intermediate clean-image estimate to `[-1, 1]`.
    pub clip_x0: bool,
    /// Number of reverse steps; `None` runs all `T`.
    pub infer_steps: Option<usize>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            parameterization: Parameterization::PredictX0,
            clip_x0: true,
            infer_steps: None,
        }
    }
}

/// Mean and isotropic variance of `q(x_{t−1} | x_t, x_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: Tensor,
    pub variance_scale: f64,
}

/// A trainable conditional denoiser `f(x_t, t, y, d)`.
pub trait Denoiser {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass on `g`. `p` holds the parameter leaves in
    /// store order; `x_t` and `y` are `[1, H, W]` nodes.
    fn forward(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        x_t: NodeId,
        t: usize,
        y: NodeId,
        d: f64,
    ) -> Result<NodeId>;

    /// Spatial size the model is configured for, if it is fixed.
    fn resolution(&self) -> Option<(usize, usize)> {
        None
    }

    fn predict(&self, x_t: &Tensor, t: usize, y: &Tensor, d: f64) -> Result<Tensor> {
        let mut g = Graph::new();
        let p: Vec<NodeId> = self
            .params()
            .tensors()
            .iter()
            .map(|t| g.input(t.clone()))
            .collect();
        let xi = g.input(x_t.clone());
        let yi = g.input(y.clone());
        let out = self.forward(&mut g, &p, xi, t, yi, d)?;
        Ok(g.value(out).clone())
    }
}

/// `√ᾱ_t·x_0 + √(1−ᾱ_t)·ε`.
pub fn forward_sample(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let c = sched.lookup(t)?;
    noise_with(x0, eps, c.alpha_bar)
}

fn noise_with(x0: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Coefficients `(c_xt, c_x0)` of the posterior mean
/// `c_xt·x_t + c_x0·x_0`.
pub fn posterior_mean_coeffs(c: &StepCoeffs) -> (f64, f64) {
    let denom = 1.0 - c.alpha_bar;
    (
        (1.0 - c.beta).sqrt() * (1.0 - c.alpha_bar_prev) / denom,
        c.alpha_bar_prev.sqrt() * c.beta / denom,
    )
}

pub fn posterior_params(
    x_t: &Tensor,
    x0: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<PosteriorParams> {
    let c = sched.lookup(t)?;
    posterior_with(x_t, x0, &c)
}

fn posterior_with(x_t: &Tensor, x0: &Tensor, c: &StepCoeffs) -> Result<PosteriorParams> {
    let (cx, c0) = posterior_mean_coeffs(c);
    Ok(PosteriorParams {
        mean: x_t.zip_map(x0, |a, b| cx * a + c0 * b)?,
        variance_scale: c.beta_tilde,
    })
}

/// Posterior mean written in terms of the noise:
/// `(x_t − β_t/√(1−ᾱ_t)·ε) / √(1−β_t)`.
pub fn posterior_mean_from_eps(
    x_t: &Tensor,
    eps: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let c = sched.lookup(t)?;
    let k = c.beta / (1.0 - c.alpha_bar).sqrt();
    let inv = 1.0 / (1.0 - c.beta).sqrt();
    x_t.zip_map(eps, |x, e| inv * (x - k * e))
}

/// `(x_t − √(1−ᾱ_t)·ε)/√ᾱ_t`.
pub fn x0_from_eps(x_t: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let c = sched.lookup(t)?;
    x0_from_eps_with(x_t, eps, c.alpha_bar)
}

fn x0_from_eps_with(x_t: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    if alpha_bar <= 0.0 {
        return Err(Error::Singularity(
            "cannot recover x0 from noise where the signal coefficient is zero".into(),
        ));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_map(eps, |x, e| (x - b * e) / a)
}

/// `(x_t − √ᾱ_t·x_0)/√(1−ᾱ_t)`.
pub fn eps_from_x0(x_t: &Tensor, x0: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let c = sched.lookup(t)?;
    if c.alpha_bar >= 1.0 {
        return Err(Error::Singularity(
            "noise is undefined where the noise coefficient is zero".into(),
        ));
    }
    let (a, b) = (c.alpha_bar.sqrt(), (1.0 - c.alpha_bar).sqrt());
    x_t.zip_map(x0, |x, z| (x - a * z) / b)
}

/// One ancestral step `x_t → x_{t−1}` given a clean-image estimate.
/// The last step (`β̃ = 0`) adds no noise.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &Tensor,
    t: usize,
    x0_hat: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let c = sched.lookup(t)?;
    reverse_step_with(x_t, x0_hat, &c, rng)
}

/// [`reverse_step`] with explicit coefficients, used by respaced chains.
pub fn reverse_step_with<R: Rng + ?Sized>(
    x_t: &Tensor,
    x0_hat: &Tensor,
    c: &StepCoeffs,
    rng: &mut R,
) -> Result<Tensor> {
    let post = posterior_with(x_t, x0_hat, c)?;
    if post.variance_scale <= 0.0 {
        return Ok(post.mean);
    }
    let sd = post.variance_scale.sqrt();
    let z = gaussian_like(x_t.shape(), rng);
    post.mean.zip_map(&z, |m, n| m + sd * n)
}

/// Timesteps visited by a chain of `k` reverse steps, descending from `T`.
/// With `k = T` this is `T, T−1, …, 1`; otherwise evenly spaced.
pub fn chain_timesteps(steps: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > steps {
        return Err(Error::Config(format!(
            "inference steps must lie in 1..={steps}, got {k}"
        )));
    }
    let mut ts: Vec<usize> = (1..=k)
        .map(|i| ((i as f64) * steps as f64 / k as f64).round() as usize)
        .map(|t| t.clamp(1, steps))
        .collect();
    ts.dedup();
    ts.reverse();
    Ok(ts)
}

/// Coefficients for a hop from `t` to `prev` (`prev = 0` for the final hop).
pub fn hop_coeffs(sched: &NoiseSchedule, t: usize, prev: usize) -> Result<StepCoeffs> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar();
    let (a, ap) = (ab[t], ab[prev]);
    if prev + 1 == t {
        return sched.lookup(t);
    }
    let beta = 1.0 - a / ap;
    Ok(StepCoeffs {
        alpha_bar: a,
        alpha_bar_prev: ap,
        beta,
        beta_tilde: (1.0 - ap) / (1.0 - a) * beta,
    })
}

/// Clean-image estimate from a raw model output.
pub fn x0_estimate(
    x_t: &Tensor,
    output: &Tensor,
    alpha_bar: f64,
    cfg: &DiffusionConfig,
) -> Result<Tensor> {
    let x0 = match cfg.parameterization {
        Parameterization::PredictX0 => output.clone(),
        Parameterization::PredictEps => x0_from_eps_with(x_t, output, alpha_bar)?,
    };
    Ok(if cfg.clip_x0 {
        x0.map(|v| v.clamp(-1.0, 1.0))
    } else {
        x0
    })
}

/// Runs the full reverse chain from pure noise and returns `x̂_0`.
pub fn sample_chain<M: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &M,
    y: &Tensor,
    d: f64,
    sched: &NoiseSchedule,
    cfg: &DiffusionConfig,
    rng: &mut R,
) -> Result<Tensor> {
    if y.shape().len() != 3 || y.shape()[0] != 1 {
        return dim_err(format!("canvas must be [1, H, W], got {:?}", y.shape()));
    }
    if let Some((h, w)) = model.resolution() {
        if (y.shape()[1], y.shape()[2]) != (h, w) {
            return dim_err(format!(
                "canvas is {}x{} but the model expects {h}x{w}",
                y.shape()[1],
                y.shape()[2]
            ));
        }
    }
    let k = cfg.infer_steps.unwrap_or(sched.steps());
    let ts = chain_timesteps(sched.steps(), k)?;
    let mut x = gaussian_like(y.shape(), rng);
    for (i, &t) in ts.iter().enumerate() {
        let prev = ts.get(i + 1).copied().unwrap_or(0);
        let c = hop_coeffs(sched, t, prev)?;
        let out = model.predict(&x, t, y, d)?;
        let x0_hat = x0_estimate(&x, &out, c.alpha_bar, cfg)?;
        x = reverse_step_with(&x, &x0_hat, &c, rng)?;
    }
    Ok(x)
}

/// One `(x_0, y, d)` training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x0: Tensor,
    pub y: Tensor,
    pub d: f64,
}

/// A recorded loss evaluation, ready for a backward pass.
#[derive(Debug)]
pub struct LossTape {
    pub graph: Graph,
    pub params: Vec<NodeId>,
    pub loss: NodeId,
}

impl LossTape {
    pub fn value(&self) -> f64 {
        self.graph.value(self.loss).item()
    }

    /// Backpropagates and writes parameter gradients into `store`.
    pub fn backward_into(mut self, store: &mut ParamStore) -> Result<f64> {
        self.graph.backward(self.loss)?;
        self.graph.write_grads(&self.params, store)?;
        Ok(self.value())
    }
}

/// `‖target − f(x_t, t, y, d)‖²` with `x_t` built from `(x_0, t, ε)`; the
/// target is `x_0` or `ε` depending on the parameterization.
#[allow(clippy::too_many_arguments)]
pub fn training_loss<M: Denoiser + ?Sized>(
    model: &M,
    x0: &Tensor,
    y: &Tensor,
    d: f64,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
    param: Parameterization,
) -> Result<LossTape> {
    let x_t = forward_sample(x0, t, eps, sched)?;
    let mut g = Graph::new();
    let params = g.bind(model.params());
    let xi = g.input(x_t);
    let yi = g.input(y.clone());
    let out = model.forward(&mut g, &params, xi, t, yi, d)?;
    let target = match param {
        Parameterization::PredictX0 => x0.clone(),
        Parameterization::PredictEps => eps.clone(),
    };
    let ti = g.input(target);
    let diff = g.sub(ti, out)?;
    let loss = g.sum_squares(diff)?;
    Ok(LossTape {
        graph: g,
        params,
        loss,
    })
}

/// One optimizer step on one example: sample `t` then `ε`, evaluate the
/// loss, backpropagate, and apply Adam. Returns the loss value.
pub fn train_step<M: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &mut M,
    ex: &Example,
    sched: &NoiseSchedule,
    param: Parameterization,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<f64> {
    let t = rng.gen_range(1..=sched.steps());
    let eps = gaussian_like(ex.x0.shape(), rng);
    let tape = training_loss(&*model, &ex.x0, &ex.y, ex.d, t, &eps, sched, param)?;
    let loss = tape.backward_into(model.params_mut())?;
    adam.step(model.params_mut())?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

/// One pass over `data` in order with batch size 1.
pub fn train_epoch<M: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &mut M,
    data: &[Example],
    sched: &NoiseSchedule,
    param: Parameterization,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Usage("training epoch over an empty dataset".into()));
    }
    let mut stats = EpochStats {
        mean: 0.0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        steps: 0,
    };
    for ex in data {
        let l = train_step(model, ex, sched, param, adam, rng)?;
        stats.mean += l;
        stats.min = stats.min.min(l);
        stats.max = stats.max.max(l);
        stats.steps += 1;
    }
    stats.mean /= stats.steps as f64;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(100, 0.008).unwrap()
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = sched();
        let x0 = seeded_gaussian(&[1, 3, 3], 1);
        let z = Tensor::zeros(&[1, 3, 3]);
        let xt = forward_sample(&x0, 40, &z, &s).unwrap();
        let a = s.alpha_bar()[40].sqrt();
        for (u, v) in xt.data().iter().zip(x0.data()) {
            assert_eq!(*u, a * v);
        }
        assert_eq!(
            noise_with(&x0, &seeded_gaussian(&[1, 3, 3], 2), 1.0).unwrap(),
            x0
        );
    }

    #[test]
    fn shape_and_range_faults() {
        let s = sched();
        let x0 = Tensor::zeros(&[1, 2, 2]);
        let bad = Tensor::zeros(&[1, 2, 3]);
        assert!(matches!(
            forward_sample(&x0, 3, &bad, &s),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            posterior_params(&x0, &x0, 0, &s),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            posterior_params(&x0, &x0, 101, &s),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn first_step_posterior_is_x0() {
        let s = sched();
        let x0 = seeded_gaussian(&[1, 4, 4], 3);
        let xt = seeded_gaussian(&[1, 4, 4], 4);
        let p = posterior_params(&xt, &x0, 1, &s).unwrap();
        assert_eq!(p.variance_scale, 0.0);
        assert!(p.mean.max_abs_diff(&x0) < 1e-15);
        let zero = Tensor::zeros(&[1, 4, 4]);
        let p0 = posterior_params(&zero, &zero, 17, &s).unwrap();
        assert!(p0.mean.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conversions_round_trip() {
        let s = sched();
        let x0 = seeded_gaussian(&[1, 3, 5], 5);
        let eps = seeded_gaussian(&[1, 3, 5], 6);
        for t in [1, 10, 50, 100] {
            let xt = forward_sample(&x0, t, &eps, &s).unwrap();
            let e = eps_from_x0(&xt, &x0, t, &s).unwrap();
            assert!(e.max_abs_diff(&eps) < 1e-9);
            let z = x0_from_eps(&xt, &Tensor::zeros(&[1, 3, 5]), t, &s).unwrap();
            let a = s.alpha_bar()[t].sqrt();
            for (u, v) in z.data().iter().zip(xt.data()) {
                assert!((u - v / a).abs() < 1e-9 * (1.0 + u.abs()));
            }
        }
        assert!(matches!(
            x0_from_eps_with(&x0, &eps, 0.0),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn last_reverse_step_is_deterministic() {
        let s = sched();
        let xt = seeded_gaussian(&[1, 4, 4], 8);
        let x0h = seeded_gaussian(&[1, 4, 4], 9);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = reverse_step(&xt, 1, &x0h, &s, &mut r1).unwrap();
        let b = reverse_step(&xt, 1, &x0h, &s, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&x0h) < 1e-15);
    }

    #[test]
    fn timestep_grids() {
        assert_eq!(chain_timesteps(5, 5).unwrap(), vec![5, 4, 3, 2, 1]);
        assert_eq!(chain_timesteps(10, 2).unwrap(), vec![10, 5]);
        let ts = chain_timesteps(200, 7).unwrap();
        assert_eq!(ts[0], 200);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert!(chain_timesteps(10, 0).is_err());
        assert!(chain_timesteps(10, 11).is_err());
    }

    #[test]
    fn unit_hops_match_lookup() {
        let s = sched();
        for t in 1..=100 {
            assert_eq!(hop_coeffs(&s, t, t - 1).unwrap(), s.lookup(t).unwrap());
        }
        let c = hop_coeffs(&s, 50, 0).unwrap();
        assert_eq!(c.beta_tilde, 0.0);
    }

    #[test]
    fn parse_parameterization() {
        assert_eq!(
            "predict-x0".parse::<Parameterization>().unwrap(),
            Parameterization::PredictX0
        );
        assert_eq!(
            "eps".parse::<Parameterization>().unwrap(),
            Parameterization::PredictEps
        );
        assert!("v".parse::<Parameterization>().is_err());
    }
}
