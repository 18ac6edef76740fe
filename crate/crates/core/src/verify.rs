//! Numerical checks of the Gaussian identities behind the training objective.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    forward_sample, posterior_mean_coeffs, posterior_mean_from_eps, posterior_params, x0_estimate,
    Denoiser, DiffusionConfig,
};
use crate::error::{dim_err, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::{gaussian_like, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    /// `σ²·I`.
    Isotropic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

impl GaussianSpec {
    pub fn full(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return dim_err(format!(
                "covariance {}x{} for a {}-dim mean",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            ));
        }
        Ok(Self {
            mean,
            cov: Covariance::Full(cov),
        })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::Numeric(format!(
                "isotropic variance {variance} is not positive"
            )));
        }
        Ok(Self {
            mean,
            cov: Covariance::Isotropic(variance),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Full(m) => m.clone(),
            Covariance::Isotropic(s) => DMatrix::identity(self.dim(), self.dim()) * *s,
        }
    }
}

/// `x − ln(1 + x)` without cancellation near 0.
fn x_minus_log1p(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // x²/2 − x³/3 + x⁴/4
        x * x * (0.5 - x * (1.0 / 3.0 - x * 0.25))
    } else {
        x - x.ln_1p()
    }
}

/// `KL(p ‖ q)` between multivariate Gaussians.
pub fn kl_gaussian(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return dim_err(format!(
            "KL between {}-dim and {}-dim Gaussians",
            p.dim(),
            q.dim()
        ));
    }
    let diff = &q.mean - &p.mean;
    let n = p.dim() as f64;
    if let (Covariance::Isotropic(s1), Covariance::Isotropic(s2)) = (&p.cov, &q.cov) {
        let r = s1 / s2;
        return Ok(0.5 * n * x_minus_log1p(r - 1.0) + diff.norm_squared() / (2.0 * s2));
    }
    kl_full(&p.cov_matrix(), &q.cov_matrix(), &diff)
}

/// `½[tr(Σ₂⁻¹Σ₁) + Δᵀ Σ₂⁻¹ Δ − D + ln(|Σ₂|/|Σ₁|)]` with Cholesky factors.
pub fn kl_full(s1: &DMatrix<f64>, s2: &DMatrix<f64>, diff: &DVector<f64>) -> Result<f64> {
    let c2 = s2
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("second covariance is not positive definite".into()))?;
    let c1 = s1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("first covariance is not positive definite".into()))?;
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr = c2.solve(s1).trace();
    let maha = diff.dot(&c2.solve(diff));
    let n = diff.len() as f64;
    Ok(0.5 * (tr + maha - n + logdet(&c2.l()) - logdet(&c1.l())))
}

/// Outcome of one check. `pass` holds exactly when
/// `discrepancy <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub values: BTreeMap<String, f64>,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub samples: Option<usize>,
}

impl VerificationReport {
    pub fn new(name: impl Into<String>, discrepancy: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            values: BTreeMap::new(),
            discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
            samples: None,
        }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_owned(), v);
        self
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.samples = Some(n);
        self
    }

    /// Worst of several reports under one name.
    pub fn merge(name: impl Into<String>, parts: &[VerificationReport]) -> Self {
        let worst = parts
            .iter()
            .max_by(|a, b| {
                (a.discrepancy / a.tolerance)
                    .partial_cmp(&(b.discrepancy / b.tolerance))
                    .unwrap_or(std::cmp::Ordering::Greater)
            })
            .expect("at least one part");
        let mut r = Self::new(name, worst.discrepancy, worst.tolerance);
        r.pass = parts.iter().all(|p| p.pass);
        r.values.insert("cases".into(), parts.len() as f64);
        r.samples = parts.iter().filter_map(|p| p.samples).max();
        r
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub const THEOREM2_TOL: f64 = 1e-9;

/// Compares `KL(N(μ_θ, β̃I) ‖ N(μ̃, β̃I))` from the general formula with
/// `‖μ̃ − μ_θ‖²/(2β̃)`.
pub fn check_theorem2(
    mu_tilde: &[f64],
    mu_theta: &[f64],
    beta_tilde: f64,
) -> Result<VerificationReport> {
    check_theorem2_perturbed(mu_tilde, mu_theta, beta_tilde, 0.0)
}

/// [`check_theorem2`] with the variance of the closed-form side scaled by
/// `1 + rel_fault`; any nonzero fault should make the check fail.
pub fn check_theorem2_perturbed(
    mu_tilde: &[f64],
    mu_theta: &[f64],
    beta_tilde: f64,
    rel_fault: f64,
) -> Result<VerificationReport> {
    if mu_tilde.len() != mu_theta.len() {
        return dim_err("means differ in length");
    }
    if !(beta_tilde > 0.0) {
        return Err(Error::Numeric(format!(
            "posterior variance {beta_tilde} is not positive"
        )));
    }
    let n = mu_tilde.len();
    let cov = DMatrix::identity(n, n) * beta_tilde;
    let a = DVector::from_column_slice(mu_tilde);
    let b = DVector::from_column_slice(mu_theta);
    let kl = kl_full(&cov, &cov, &(&a - &b))?;
    let mse = (&a - &b).norm_squared() / (2.0 * beta_tilde * (1.0 + rel_fault));
    Ok(
        VerificationReport::new("theorem2", rel_diff(kl, mse), THEOREM2_TOL)
            .value("kl", kl)
            .value("scaled_mse", mse),
    )
}

/// `n` random instances of dimension `dim` with `β̃` drawn log-uniformly.
pub fn theorem2_suite(
    n: usize,
    dim: usize,
    seed: u64,
    rel_fault: f64,
) -> Result<VerificationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        let a: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let beta = 10f64.powf(rng.gen_range(-5.0..-0.5));
        parts.push(check_theorem2_perturbed(&a, &b, beta, rel_fault)?);
    }
    Ok(VerificationReport::merge("theorem2", &parts))
}

pub const MC_SIGMAS: f64 = 4.0;

struct Moments {
    mean: f64,
    var: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Moments { mean, var }
}

/// Draws `x_t` from a fixed scalar `x_0` by iterating the single-step kernel
/// `t` times and by the closed-form marginal, on independent streams, and
/// compares means and variances with each other and with
/// `(√ᾱ_t·x_0, 1 − ᾱ_t)`. The discrepancy is the largest z-score.
pub fn check_marginal_consistency<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    t: usize,
    x0: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<VerificationReport> {
    sched.check_step(t)?;
    if n_samples < 2 {
        return Err(Error::Usage(
            "marginal check needs at least 2 samples".into(),
        ));
    }
    let c = sched.lookup(t)?;
    let beta = sched.beta();
    let iterated: Vec<f64> = (0..n_samples)
        .map(|_| {
            let mut x = x0;
            for b in &beta[1..=t] {
                let e: f64 = StandardNormal.sample(rng);
                x = (1.0 - b).sqrt() * x + b.sqrt() * e;
            }
            x
        })
        .collect();
    let (sa, sb) = (c.alpha_bar.sqrt(), (1.0 - c.alpha_bar).sqrt());
    let one_shot: Vec<f64> = (0..n_samples)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            sa * x0 + sb * e
        })
        .collect();
    let (mi, mo) = (moments(&iterated), moments(&one_shot));
    let n = n_samples as f64;
    let var_true = 1.0 - c.alpha_bar;
    let mean_true = sa * x0;
    let se_mean = ((mi.var + mo.var) / n).sqrt();
    let se_var = var_true * (2.0 / (n - 1.0)).sqrt();
    let z = [
        (mi.mean - mo.mean).abs() / se_mean,
        (mi.mean - mean_true).abs() / (var_true / n).sqrt(),
        (mi.var - var_true).abs() / se_var,
        (mo.var - var_true).abs() / se_var,
        (mi.var - mo.var).abs() / (se_var * 2f64.sqrt()),
    ];
    let worst = z.into_iter().fold(0.0, f64::max);
    Ok(
        VerificationReport::new(format!("marginal_t{t}"), worst, MC_SIGMAS)
            .value("mean_iterated", mi.mean)
            .value("mean_one_shot", mo.mean)
            .value("mean_exact", mean_true)
            .value("var_iterated", mi.var)
            .value("var_one_shot", mo.var)
            .value("var_exact", var_true)
            .samples(n_samples),
    )
}

/// `KL(q(x_T | x_0) ‖ N(0, I))`.
pub fn prior_matching_kl(x0: &Tensor, sched: &NoiseSchedule) -> Result<f64> {
    let ab = sched.alpha_bar()[sched.steps()];
    let mean = DVector::from_iterator(x0.len(), x0.data().iter().map(|v| ab.sqrt() * v));
    let q = GaussianSpec::isotropic(mean, 1.0 - ab)?;
    let prior = GaussianSpec::isotropic(DVector::zeros(x0.len()), 1.0)?;
    kl_gaussian(&q, &prior)
}

/// Per-`t` denoising-matching terms `KL(q(x_{t−1}|x_t,x_0) ‖ p_θ(x_{t−1}|x_t))`
/// at one sampled `x_t` each. Both transitions share the variance `β̃_t`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_kl_terms<M: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &Tensor,
    y: &Tensor,
    d: f64,
    sched: &NoiseSchedule,
    cfg: &DiffusionConfig,
    t_list: &[usize],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(t_list.len());
    for &t in t_list {
        if t < 2 || t > sched.steps() {
            return Err(Error::Index {
                what: "ELBO timestep",
                index: t,
                lo: 2,
                hi: sched.steps(),
            });
        }
        let c = sched.lookup(t)?;
        let eps = gaussian_like(x0.shape(), rng);
        let x_t = forward_sample(x0, t, &eps, sched)?;
        let pred = model.predict(&x_t, t, y, d)?;
        let x0_hat = x0_estimate(&x_t, &pred, c.alpha_bar, cfg)?;
        let q = posterior_params(&x_t, x0, t, sched)?;
        let p = posterior_params(&x_t, &x0_hat, t, sched)?;
        let as_vec = |t: &Tensor| DVector::from_column_slice(t.data());
        let kl = kl_gaussian(
            &GaussianSpec::isotropic(as_vec(&q.mean), q.variance_scale)?,
            &GaussianSpec::isotropic(as_vec(&p.mean), p.variance_scale)?,
        )?;
        out.push(kl);
    }
    Ok(out)
}

/// Worst relative gap between the posterior mean from `(x_t, x_0)` and the
/// noise form, over `n` random `(x_0, ε, t)` triples of dimension `dim`.
pub fn posterior_identity(sched: &NoiseSchedule, n: usize, dim: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let t = rng.gen_range(1..=sched.steps());
        let x0 = Tensor::from_fn(&[dim], |_| rng.gen_range(-1.0..=1.0));
        let eps = gaussian_like(&[dim], &mut rng);
        let x_t = forward_sample(&x0, t, &eps, sched)?;
        let a = posterior_params(&x_t, &x0, t, sched)?.mean;
        let b = posterior_mean_from_eps(&x_t, &eps, t, sched)?;
        let scale = a
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            .max(1e-300);
        worst = worst.max(a.max_abs_diff(&b) / scale);
    }
    Ok(worst)
}

/// Largest relative gap of `ᾱ_t = Π_{i≤t}(1 − β_i)` over all `t`.
pub fn telescoping_gap(sched: &NoiseSchedule) -> f64 {
    let mut prod = 1.0;
    let mut worst: f64 = 0.0;
    for t in 1..=sched.steps() {
        prod *= 1.0 - sched.beta()[t];
        worst = worst.max(rel_diff(prod, sched.alpha_bar()[t]));
    }
    worst
}

/// Posterior coefficients evaluated at `t = 1` must return `x_0`.
pub fn first_step_posterior(sched: &NoiseSchedule) -> Result<(f64, f64, f64)> {
    let c = sched.lookup(1)?;
    let (cx, c0) = posterior_mean_coeffs(&c);
    Ok((cx, c0, c.beta_tilde))
}
