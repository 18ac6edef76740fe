//! Cosine noise schedule.
//!
//! `g(t) = cos²(((t/T + s)/(1 + s))·π/2)`, `ᾱ_t = g(t)/g(0)`,
//! `β_t = 1 − ᾱ_t/ᾱ_{t−1}`, `β̃_t = (1 − ᾱ_{t−1})/(1 − ᾱ_t)·β_t`.
//!
//! `β_t` is clipped to [`MAX_BETA`]. Only the last step is affected for any
//! practical `T`: the curve reaches `ᾱ_T = 0` exactly, so the unclipped
//! `β_T` would be 1. The stored `ᾱ_T` follows the clipped `β_T`
//! (`ᾱ_{T−1}·(1 − β_T)`), which keeps `ᾱ_t = Π(1 − β_i)` for every `t` and
//! keeps the noise/clean-image conversions finite at `t = T`. The unclipped
//! curve stays available through [`NoiseSchedule::cosine_alpha_bar`].

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_OFFSET: f64 = 0.008;
pub const DEFAULT_STEPS: usize = 2000;
pub const MAX_BETA: f64 = 0.999;

/// Coefficients for one timestep, as consumed by the diffusion operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoeffs {
    pub alpha_bar: f64,
    pub alpha_bar_prev: f64,
    pub beta: f64,
    pub beta_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    offset: f64,
    /// Index `0..=T`.
    alpha_bar: Vec<f64>,
    /// Index `0..=T`; slot 0 is unused and holds 0.
    beta: Vec<f64>,
    /// Index `0..=T`; slot 0 is unused and holds 0.
    beta_tilde: Vec<f64>,
}

/// Serializable identity of a schedule; the arrays are rebuilt from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub offset: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            offset: DEFAULT_OFFSET,
        }
    }
}

impl NoiseSchedule {
    pub fn build(steps: usize, offset: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(offset > 0.0 && offset < 0.1) {
            return Err(Error::Config(format!(
                "schedule offset s must lie in (0, 0.1), got {offset}"
            )));
        }
        let mut alpha_bar: Vec<f64> = (0..=steps)
            .map(|t| cosine_curve(t, steps, offset) / cosine_curve(0, steps, offset))
            .collect();
        alpha_bar[0] = 1.0;
        let mut beta = vec![0.0; steps + 1];
        let mut beta_tilde = vec![0.0; steps + 1];
        for t in 1..=steps {
            let raw = 1.0 - alpha_bar[t] / alpha_bar[t - 1];
            if raw > MAX_BETA {
                beta[t] = MAX_BETA;
                alpha_bar[t] = alpha_bar[t - 1] * (1.0 - MAX_BETA);
            } else {
                beta[t] = raw;
            }
            beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
        }
        Ok(Self {
            steps,
            offset,
            alpha_bar,
            beta,
            beta_tilde,
        })
    }

    pub fn from_spec(spec: ScheduleSpec) -> Result<Self> {
        Self::build(spec.steps, spec.offset)
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps,
            offset: self.offset,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `ᾱ_0..=ᾱ_T`.
    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `β_1..=β_T` (slot 0 unused).
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `β̃_1..=β̃_T` (slot 0 unused).
    pub fn beta_tilde(&self) -> &[f64] {
        &self.beta_tilde
    }

    /// Unclipped `g(t)/g(0)`; zero at `t = T`.
    pub fn cosine_alpha_bar(&self, t: usize) -> f64 {
        cosine_curve(t, self.steps, self.offset) / cosine_curve(0, self.steps, self.offset)
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::Index {
                what: "timestep",
                index: t,
                lo: 1,
                hi: self.steps,
            });
        }
        Ok(())
    }

    pub fn lookup(&self, t: usize) -> Result<StepCoeffs> {
        self.check_step(t)?;
        Ok(StepCoeffs {
            alpha_bar: self.alpha_bar[t],
            alpha_bar_prev: self.alpha_bar[t - 1],
            beta: self.beta[t],
            beta_tilde: self.beta_tilde[t],
        })
    }
}

/// `g(t)`, evaluated as `sin²(π/2 · (1 − t/T)/(1 + s))`. This equals the
/// cosine form but lands on exactly 0 at `t = T`.
fn cosine_curve(t: usize, steps: usize, offset: f64) -> f64 {
    let rest = (steps - t) as f64 / steps as f64;
    (FRAC_PI_2 * rest / (1.0 + offset)).sin().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configuration() {
        assert!(matches!(
            NoiseSchedule::build(1, 0.008),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::build(10, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::build(10, 0.1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn endpoints() {
        let s = NoiseSchedule::build(2000, 0.008).unwrap();
        assert_eq!(s.alpha_bar()[0], 1.0);
        assert_eq!(s.cosine_alpha_bar(2000), 0.0);
        assert!(s.alpha_bar()[2000] < 1e-9);
        assert_eq!(s.beta()[2000], MAX_BETA);
    }

    #[test]
    fn anchor_at_midpoint() {
        // cos²((0.5 + 0.008)/1.008 · π/2) / cos²(0.008/1.008 · π/2), evaluated
        // independently of the sin form used above.
        let g = |u: f64| ((u + 0.008) / 1.008 * FRAC_PI_2).cos().powi(2);
        let expect = g(0.5) / g(0.0);
        let s = NoiseSchedule::build(2000, 0.008).unwrap();
        assert!((s.alpha_bar()[1000] - expect).abs() < 1e-14);
        // 40-digit evaluation of the same expression
        assert!((s.alpha_bar()[1000] - 0.493_843_590_440_637_7).abs() < 1e-13);
    }

    #[test]
    fn lookup_contract() {
        let s = NoiseSchedule::build(50, 0.008).unwrap();
        assert_eq!(s.lookup(1).unwrap().beta_tilde, 0.0);
        for t in 1..=50 {
            let c = s.lookup(t).unwrap();
            assert!((c.beta - (1.0 - c.alpha_bar / c.alpha_bar_prev)).abs() < 1e-15);
            assert!(c.beta_tilde >= 0.0 && c.beta_tilde <= c.beta);
        }
        assert!(matches!(s.lookup(0), Err(Error::Index { .. })));
        assert!(matches!(s.lookup(51), Err(Error::Index { .. })));
    }

    #[test]
    fn betas_in_open_unit_interval() {
        for &(t, s) in &[(2, 0.008), (10, 0.05), (200, 0.008), (2000, 0.008)] {
            let sch = NoiseSchedule::build(t, s).unwrap();
            for b in &sch.beta()[1..] {
                assert!(*b > 0.0 && *b < 1.0);
            }
        }
    }
}
