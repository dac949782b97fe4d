//! Noise schedules: the variance-preserving beta schedule driving the
//! forward/reverse sampler, and the zero-drift noise-energy profile used by
//! the spectral analysis. The two models are kept separate on purpose; no
//! conversion between them is defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance-preserving schedule: per-step `beta_t`, `alpha_t = 1 - beta_t`,
/// and the running product `alpha_bar_t`.
///
/// Step indices are 0-based: index `t` in `0..T` is step `t+1` of a 1-based
/// formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from raw betas; each must lie strictly in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        for (t, b) in betas.iter().enumerate() {
            if !(b.is_finite() && *b > 0.0 && *b < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "beta[{t}] = {b} outside (0, 1)"
                )));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Linear interpolation of beta between `beta_start` and `beta_end`,
    /// inclusive of both endpoints.
    pub fn linear_beta(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta endpoints must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas = if t_steps == 1 {
            vec![beta_start]
        } else {
            let denom = (t_steps - 1) as f64;
            let mut v: Vec<f64> = (0..t_steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / denom)
                .collect();
            v[t_steps - 1] = beta_end;
            v
        };
        Self::from_betas(betas)
    }

    pub fn from_config(config: &ScheduleConfig) -> Result<Self> {
        Self::linear_beta(config.t, config.beta_start, config.beta_end)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::StepOutOfRange {
                index: t,
                len: self.len(),
            });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha_bars[t])
    }
}

/// JSON form of a linear schedule: `{"T": 1000, "beta_start": 1e-4, "beta_end": 0.02}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Zero-drift diffusion-coefficient profile: per-step `g^2(t)` and its
/// running sum, the accumulated noise energy.
#[derive(Debug, Clone, PartialEq)]
pub struct GProfile {
    g_squared: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GProfile {
    pub fn from_g_squared(g_squared: Vec<f64>) -> Result<Self> {
        if g_squared.is_empty() {
            return Err(Error::InvalidArgument("profile needs at least one step".into()));
        }
        for (t, g) in g_squared.iter().enumerate() {
            if !(g.is_finite() && *g >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "g_squared[{t}] = {g} must be non-negative"
                )));
            }
        }
        let mut cumulative = Vec::with_capacity(g_squared.len());
        let mut acc = 0.0;
        for g in &g_squared {
            acc += g;
            cumulative.push(acc);
        }
        Ok(Self {
            g_squared,
            cumulative,
        })
    }

    /// Profile with constant `g^2 = c`, so the accumulated energy after step
    /// `t` is `c * (t + 1)`.
    pub fn constant(t_steps: usize, c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "constant g^2 must be non-negative, got {c}"
            )));
        }
        Self::from_g_squared(vec![c; t_steps])
    }

    pub fn len(&self) -> usize {
        self.g_squared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_squared.is_empty()
    }

    pub fn g_squared(&self) -> &[f64] {
        &self.g_squared
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Accumulated noise energy through step `t` (inclusive).
    pub fn noise_energy(&self, t: usize) -> Result<f64> {
        if t >= self.len() {
            return Err(Error::StepOutOfRange {
                index: t,
                len: self.len(),
            });
        }
        Ok(self.cumulative[t])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_beta_hits_endpoints() {
        let s = NoiseSchedule::linear_beta(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.betas()[0], 1e-4);
        assert_eq!(s.betas()[999], 0.02);
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear_beta(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn first_alpha_bar_is_first_alpha() {
        let s = NoiseSchedule::linear_beta(10, 0.01, 0.2).unwrap();
        assert_eq!(s.alpha_bars()[0], 1.0 - s.betas()[0]);
    }

    #[test]
    fn alpha_bar_recurrence_is_exact() {
        let s = NoiseSchedule::linear_beta(500, 1e-4, 0.02).unwrap();
        for t in 1..500 {
            assert_eq!(s.alpha_bars()[t], s.alpha_bars()[t - 1] * s.alphas()[t]);
        }
    }

    #[test]
    fn alpha_bar_strictly_decreases_and_stays_in_unit_interval() {
        let s = NoiseSchedule::linear_beta(1000, 1e-4, 0.02).unwrap();
        let bars = s.alpha_bars();
        assert!(bars[0] < 1.0);
        assert!(bars[999] > 0.0);
        for t in 1..1000 {
            assert!(bars[t] < bars[t - 1]);
        }
    }

    #[test]
    fn rejects_bad_endpoints() {
        assert!(NoiseSchedule::linear_beta(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear_beta(10, 0.02, 0.01).is_err());
        assert!(NoiseSchedule::linear_beta(10, 0.5, 1.0).is_err());
        assert!(NoiseSchedule::linear_beta(0, 1e-4, 0.02).is_err());
    }

    #[test]
    fn schedule_from_json_config() {
        let config: ScheduleConfig =
            serde_json::from_str(r#"{"T": 100, "beta_start": 0.001, "beta_end": 0.1}"#).unwrap();
        let s = NoiseSchedule::from_config(&config).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.betas()[0], 0.001);
        assert_eq!(s.betas()[99], 0.1);
    }

    #[test]
    fn constant_profile_cumulative() {
        let p = GProfile::constant(10, 1.0).unwrap();
        assert_eq!(p.noise_energy(9).unwrap(), 10.0);
        assert_eq!(p.noise_energy(4).unwrap(), 5.0);

        let p = GProfile::constant(3, 0.5).unwrap();
        assert_eq!(p.cumulative(), &[0.5, 1.0, 1.5]);

        let p = GProfile::constant(5, 0.0).unwrap();
        assert!(p.cumulative().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_step_energy_is_first_g_squared() {
        let p = GProfile::constant(4, 2.0).unwrap();
        assert_eq!(p.noise_energy(0).unwrap(), 2.0);
    }

    #[test]
    fn noise_energy_bounds_checked() {
        let p = GProfile::constant(10, 1.0).unwrap();
        assert!(matches!(
            p.noise_energy(10),
            Err(Error::StepOutOfRange { index: 10, len: 10 })
        ));
    }

    #[test]
    fn cumulative_recurrence_is_exact() {
        let p = GProfile::from_g_squared(vec![0.3, 0.0, 1.7, 0.25]).unwrap();
        for t in 1..4 {
            assert_eq!(p.cumulative()[t], p.cumulative()[t - 1] + p.g_squared()[t]);
        }
    }

    #[test]
    fn rejects_negative_g() {
        assert!(GProfile::constant(5, -0.1).is_err());
        assert!(GProfile::from_g_squared(vec![1.0, -2.0]).is_err());
    }
}
