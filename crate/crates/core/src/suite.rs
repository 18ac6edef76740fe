//! The full verification run behind the `verify` command.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::Denoiser;
use crate::diffusion::{
    forward_sample, posterior_mean_from_eps, posterior_params, x0_from_eps, DiffusionConfig,
    Parameterization,
};
use crate::error::Result;
use crate::gradcheck::{check_gradients, random_picks, LossPoint};
use crate::net::{is_inert_parameter, DenoiserModel, UNetConfig};
use crate::pipeline::LoadedModel;
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::tensor::{gaussian_like, seeded_gaussian, Tensor};
use crate::verify::{
    check_marginal_consistency, elbo_kl_terms, first_step_posterior, kl_gaussian,
    posterior_identity, prior_matching_kl, telescoping_gap, theorem2_suite, GaussianSpec,
    VerificationReport,
};

pub const GRAD_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub schedule: ScheduleSpec,
    pub seed: u64,
    pub mc_samples: usize,
    /// Relative perturbation of the posterior variance on the closed-form
    /// side of the loss/KL identity; 0 for a faithful run.
    pub theorem2_fault: f64,
    pub grad_samples: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::default(),
            seed: 0,
            mc_samples: 100_000,
            theorem2_fault: 0.0,
            grad_samples: 10,
        }
    }
}

/// `cos²(((t/T + s)/(1 + s))·π/2) / cos²((s/(1 + s))·π/2)`, the schedule
/// curve in its textbook form.
pub fn cosine_oracle(t: usize, steps: usize, s: f64) -> f64 {
    let g = |u: f64| {
        ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2)
    };
    g(t as f64 / steps as f64) / g(0.0)
}

pub fn schedule_checks(spec: ScheduleSpec) -> Result<Vec<VerificationReport>> {
    let s = NoiseSchedule::from_spec(spec)?;
    let t = spec.steps;
    let mid = t / 2;
    let oracle = cosine_oracle(mid, t, spec.offset);
    let (cx, c0, bt) = first_step_posterior(&s)?;
    Ok(vec![
        VerificationReport::new(
            "schedule_endpoints",
            (s.alpha_bar()[0] - 1.0).abs().max(s.cosine_alpha_bar(t)),
            1e-12,
        )
        .value("alpha_bar_0", s.alpha_bar()[0])
        .value("alpha_bar_T_unclipped", s.cosine_alpha_bar(t))
        .value("alpha_bar_T_stored", s.alpha_bar()[t]),
        VerificationReport::new(
            "schedule_midpoint",
            (s.alpha_bar()[mid] - oracle).abs(),
            1e-12,
        )
        .value("alpha_bar_mid", s.alpha_bar()[mid])
        .value("oracle", oracle),
        VerificationReport::new("schedule_telescoping", telescoping_gap(&s), 1e-10),
        VerificationReport::new(
            "posterior_first_step",
            cx.abs() + (c0 - 1.0).abs() + bt.abs(),
            0.0,
        )
        .value("coef_xt", cx)
        .value("coef_x0", c0)
        .value("beta_tilde_1", bt),
    ])
}

/// Reverse-step means from `x̂_0` and from the matching noise estimate.
pub fn parameterization_equivalence(
    sched: &NoiseSchedule,
    n: usize,
    dim: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let t = 1 + (i * 7919) % sched.steps();
        let x0 = Tensor::from_fn(&[dim], |k| ((k as f64) * 0.37 + i as f64).sin());
        let eps = gaussian_like(&[dim], &mut rng);
        let x_t = forward_sample(&x0, t, &eps, sched)?;
        let a = posterior_params(&x_t, &x0, t, sched)?.mean;
        let b = posterior_mean_from_eps(&x_t, &eps, t, sched)?;
        let back = posterior_params(&x_t, &x0_from_eps(&x_t, &eps, t, sched)?, t, sched)?.mean;
        let scale = a.data().iter().map(|v| v.abs()).fold(1e-300, f64::max);
        worst = worst.max(a.max_abs_diff(&b).max(a.max_abs_diff(&back)) / scale);
    }
    Ok(worst)
}

/// Finite-difference check on a small network whose output head has been
/// given random weights, plus the exact-zero gradient of the inert
/// cross-attention parameters.
pub fn gradient_checks(seed: u64, samples: usize) -> Result<Vec<VerificationReport>> {
    let cfg = UNetConfig {
        height: 8,
        width: 8,
        depth: 2,
        base_width: 8,
        time_enc_dim: 8,
        cond_enc_dim: 8,
        init_seed: seed,
        ..UNetConfig::default()
    };
    let mut model = DenoiserModel::new(cfg)?;
    randomize_head(&mut model, seed)?;
    let sched = NoiseSchedule::build(50, 0.008)?;
    let x0 = seeded_gaussian(&[1, 8, 8], seed + 1).map(f64::tanh);
    let y = seeded_gaussian(&[1, 8, 8], seed + 2).map(|v| if v > 0.0 { 0.0 } else { -1.0 });
    let eps = seeded_gaussian(&[1, 8, 8], seed + 3);
    let point = LossPoint {
        x0: &x0,
        y: &y,
        d: 1.5,
        t: 17,
        eps: &eps,
        sched: &sched,
        param: Parameterization::PredictX0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    let picks = random_picks(&model, samples, |n| !is_inert_parameter(n), &mut rng);
    let res = check_gradients(&mut model, &point, &picks, FD_STEP)?;
    let worst = res.iter().map(|s| s.rel_err).fold(0.0, f64::max);
    let (_, grads) = point.gradients(&model)?;
    let mut inert = 0.0f64;
    let mut live_zero = 0usize;
    for ((name, _), g) in model.params().iter().zip(&grads) {
        let m = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if is_inert_parameter(name) {
            inert = inert.max(m);
        } else if m == 0.0 {
            live_zero += 1;
        }
    }
    Ok(vec![
        VerificationReport::new("gradient_finite_difference", worst, GRAD_TOL).samples(res.len()),
        VerificationReport::new("gradient_inert_cross_attention", inert, 0.0),
        VerificationReport::new("gradient_flow", live_zero as f64, 0.0),
    ])
}

/// Replaces the zero-initialized output head with small random weights so
/// that gradient reaches every upstream layer.
pub fn randomize_head(model: &mut DenoiserModel, seed: u64) -> Result<()> {
    let store = model.params_mut();
    for name in ["conv_out.w", "conv_out.b"] {
        let t = store.get_mut(name).expect("output head");
        let r = seeded_gaussian(t.shape(), seed ^ 0x4845_4144);
        *t = r.map(|v| 0.1 * v);
    }
    Ok(())
}

pub fn run_suite(
    opts: &SuiteOptions,
    model: Option<&LoadedModel>,
) -> Result<Vec<VerificationReport>> {
    let sched = NoiseSchedule::from_spec(opts.schedule)?;
    let mut out = schedule_checks(opts.schedule)?;
    out.push(
        VerificationReport::new(
            "posterior_identity",
            posterior_identity(&sched, 1000, 16, opts.seed)?,
            1e-10,
        )
        .samples(1000),
    );
    out.push(VerificationReport::new(
        "parameterization_equivalence",
        parameterization_equivalence(&sched, 200, 16, opts.seed)?,
        1e-10,
    ));
    let unit = |m: f64| GaussianSpec::isotropic(nalgebra::DVector::from_element(1, m), 1.0);
    let kl = kl_gaussian(&unit(0.0)?, &unit(1.0)?)?;
    out.push(VerificationReport::new("kl_unit_shift", (kl - 0.5).abs(), 1e-15).value("kl", kl));
    out.push(theorem2_suite(100, 16, opts.seed, opts.theorem2_fault)?);
    for t in [1, 10, 100] {
        if t <= sched.steps() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(t as u64));
            out.push(check_marginal_consistency(
                &sched,
                t,
                1.0,
                opts.mc_samples,
                &mut rng,
            )?);
        }
    }
    let x0 = Tensor::ones(&[1, 64, 128]);
    let prior = prior_matching_kl(&x0, &sched)?;
    out.push(VerificationReport::new("prior_matching", prior, 1e-4).value("kl", prior));
    out.extend(gradient_checks(opts.seed, opts.grad_samples)?);
    if let Some(m) = model {
        out.push(elbo_nonnegativity(m, opts.seed)?);
    }
    Ok(out)
}

/// Denoising-matching terms of a trained model on a synthetic layout must be
/// nonnegative; the mean term is reported.
pub fn elbo_nonnegativity(m: &LoadedModel, seed: u64) -> Result<VerificationReport> {
    let u = m.model.config();
    let d = crate::drawing::synth::synth_layout(
        u.width.max(24),
        u.height.max(16),
        seed,
        crate::drawing::GroupTag::Group7H1,
    )?
    .resample(u.width, u.height)?;
    let ex = crate::pipeline::example_from_structural(&d, u.width, u.height)?;
    let steps = m.sched.steps();
    let ts: Vec<usize> = [2, steps / 4, steps / 2, steps]
        .into_iter()
        .filter(|&t| t >= 2)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DiffusionConfig {
        clip_x0: false,
        ..m.diffusion
    };
    let kls = elbo_kl_terms(&m.model, &ex.x0, &ex.y, ex.d, &m.sched, &cfg, &ts, &mut rng)?;
    let min = kls.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(
        VerificationReport::new("elbo_terms_nonnegative", (-min).max(0.0), 0.0)
            .value("mean_kl", kls.iter().sum::<f64>() / kls.len() as f64)
            .samples(kls.len()),
    )
}
