//! Variance-preserving forward diffusion, the frequency-domain forward
//! identity, the reverse step, an oracle denoiser, and two band-resolved
//! experiments on the reverse dynamics.
//!
//! Neither experiment trains anything. The denoiser is a shrinkage mix of
//! the exact noise (recovered algebraically from the clean clip) and fresh
//! noise, `eps_hat = lambda(t) * eps_true + (1 - lambda(t)) * zeta` with
//! `lambda(t) = alpha_bar_t`, so prediction confidence grows exactly as the
//! preserved signal strength does. That is enough to reproduce the
//! SNR-driven band ordering without a learned model.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::schedule::NoiseSchedule;
use crate::signal::MotionSequence;
use crate::transform::DctBasis;

/// Frequency split: coefficients `k < k_split` form the low band, the rest
/// the high band. Both bands must be non-empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandSplit {
    k_split: usize,
}

impl BandSplit {
    pub fn new(k_split: usize, n_frames: usize) -> Result<Self> {
        if k_split == 0 || k_split >= n_frames {
            return Err(Error::InvalidArgument(format!(
                "band split must lie strictly inside (0, {n_frames}), got {k_split}"
            )));
        }
        Ok(Self { k_split })
    }

    pub fn k_split(&self) -> usize {
        self.k_split
    }
}

/// Forward sample `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
///
/// The caller supplies the unit-variance noise so the draw is inspectable.
pub fn forward_sample(
    x0: &MotionSequence,
    schedule: &NoiseSchedule,
    t: usize,
    eps: &MotionSequence,
) -> Result<MotionSequence> {
    x0.check_same_shape(eps)?;
    let abar = schedule.alpha_bar(t)?;
    let a = abar.sqrt();
    let b = (1.0 - abar).sqrt();
    let data = a * x0.data() + b * eps.data();
    MotionSequence::new(data)
}

/// Inverts the forward formula to recover the exact noise realization:
/// `eps = (x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t)`.
pub fn oracle_eps(
    x0: &MotionSequence,
    x_t: &MotionSequence,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<MotionSequence> {
    x0.check_same_shape(x_t)?;
    let abar = schedule.alpha_bar(t)?;
    if abar >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "noise is not identifiable at step {t}: alpha_bar = 1"
        )));
    }
    let a = abar.sqrt();
    let b = (1.0 - abar).sqrt();
    let data = (x_t.data() - &(a * x0.data())) / b;
    MotionSequence::new(data)
}

/// One reverse step
/// `x_{t-1} = sqrt(abar_{t-1}) (x_t - sqrt(1-abar_t) eps_hat)/sqrt(abar_t) + sqrt(1-abar_{t-1}) z`,
/// using cumulative products throughout. Requires `t >= 1`.
pub fn ddpm_reverse_step(
    x_t: &MotionSequence,
    eps_hat: &MotionSequence,
    schedule: &NoiseSchedule,
    t: usize,
    z: &MotionSequence,
) -> Result<MotionSequence> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "reverse step needs t >= 1; step 0 has no predecessor".into(),
        ));
    }
    x_t.check_same_shape(eps_hat)?;
    x_t.check_same_shape(z)?;
    let abar_t = schedule.alpha_bar(t)?;
    let abar_prev = schedule.alpha_bar(t - 1)?;
    let mean = (x_t.data() - &((1.0 - abar_t).sqrt() * eps_hat.data())) / abar_t.sqrt();
    let data = abar_prev.sqrt() * &mean + (1.0 - abar_prev).sqrt() * z.data();
    MotionSequence::new(data)
}

/// Clean-signal estimate implied by a noise prediction at step `t`:
/// `x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)`.
pub fn implied_x0(
    x_t: &MotionSequence,
    eps_hat: &MotionSequence,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<MotionSequence> {
    x_t.check_same_shape(eps_hat)?;
    let abar = schedule.alpha_bar(t)?;
    let data = (x_t.data() - &((1.0 - abar).sqrt() * eps_hat.data())) / abar.sqrt();
    MotionSequence::new(data)
}

/// Long-format per-step error trace: one row per (trial, step, band).
#[derive(Debug, Clone, Default)]
pub struct ErrorTrace {
    pub t: Vec<f64>,
    pub band: Vec<f64>,
    pub error: Vec<f64>,
    pub trial: Vec<f64>,
}

impl ErrorTrace {
    fn push(&mut self, t: usize, band: usize, error: f64, trial: usize) {
        self.t.push(t as f64);
        self.band.push(band as f64);
        self.error.push(error);
        self.trial.push(trial as f64);
    }

    fn extend(&mut self, other: ErrorTrace) {
        self.t.extend(other.t);
        self.band.extend(other.band);
        self.error.extend(other.error);
        self.trial.extend(other.trial);
    }
}

/// Per-trial crossing steps for both bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandCrossing {
    pub trial: usize,
    /// Largest step at which the low-band error is first below threshold.
    pub low: Option<usize>,
    /// Same for the high band.
    pub high: Option<usize>,
}

/// Outcome of the coarse-to-fine experiment.
#[derive(Debug, Clone)]
pub struct CoarseToFineOutcome {
    pub crossings: Vec<BandCrossing>,
    pub trace: ErrorTrace,
}

impl CoarseToFineOutcome {
    /// Mean crossing step per band over trials where the band crossed.
    pub fn mean_crossings(&self) -> (Option<f64>, Option<f64>) {
        let mean = |xs: Vec<usize>| {
            (!xs.is_empty()).then(|| xs.iter().sum::<usize>() as f64 / xs.len() as f64)
        };
        let low: Vec<usize> = self.crossings.iter().filter_map(|c| c.low).collect();
        let high: Vec<usize> = self.crossings.iter().filter_map(|c| c.high).collect();
        (mean(low), mean(high))
    }

    /// True when every trial has both bands crossed and low >= high.
    pub fn ordering_holds(&self) -> bool {
        self.crossings
            .iter()
            .all(|c| matches!((c.low, c.high), (Some(l), Some(h)) if l >= h))
    }
}

struct BandNorms {
    low: f64,
    high: f64,
}

fn band_reference_norms(c0: ArrayView2<f64>, split: BandSplit) -> Result<BandNorms> {
    let frob = |rows: std::ops::Range<usize>| -> f64 {
        let mut acc = 0.0;
        for k in rows {
            for d in 0..c0.ncols() {
                acc += c0[[k, d]] * c0[[k, d]];
            }
        }
        acc.sqrt()
    };
    let low = frob(0..split.k_split());
    let high = frob(split.k_split()..c0.nrows());
    // Transform rounding leaves ~1e-16 residue in truly empty bands; treat
    // anything below 1e-12 of the total norm as zero reference energy.
    let floor = 1e-12 * low.hypot(high);
    if low <= floor {
        return Err(Error::ZeroBandEnergy { band: "low" });
    }
    if high <= floor {
        return Err(Error::ZeroBandEnergy { band: "high" });
    }
    Ok(BandNorms { low, high })
}

fn band_errors(
    c_hat: ArrayView2<f64>,
    c0: ArrayView2<f64>,
    split: BandSplit,
    norms: &BandNorms,
) -> (f64, f64) {
    let mut low = 0.0;
    let mut high = 0.0;
    for k in 0..c0.nrows() {
        for d in 0..c0.ncols() {
            let diff = c_hat[[k, d]] - c0[[k, d]];
            if k < split.k_split() {
                low += diff * diff;
            } else {
                high += diff * diff;
            }
        }
    }
    (low.sqrt() / norms.low, high.sqrt() / norms.high)
}

fn fill_standard_normal(dst: &mut Array2<f64>, rng: &mut impl rand::Rng) {
    for v in dst.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

fn dct_columns(basis: &DctBasis, data: ArrayView2<f64>, out: &mut Array2<f64>) {
    let mut col = vec![0.0; data.nrows()];
    for d in 0..data.ncols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = data[[i, d]];
        }
        let f = basis.forward(&col);
        for (k, v) in f.iter().enumerate() {
            out[[k, d]] = *v;
        }
    }
}

fn idct_columns(basis: &DctBasis, coeffs: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
    let mut col = vec![0.0; coeffs.nrows()];
    for d in 0..coeffs.ncols() {
        for (k, c) in col.iter_mut().enumerate() {
            *c = coeffs[[k, d]];
        }
        let v = basis.inverse(&col);
        for (i, x) in v.iter().enumerate() {
            out[[i, d]] = *x;
        }
    }
}

/// Runs reverse trajectories with the shrinkage denoiser and records, per
/// band, the largest step at which the normalized DCT-space reconstruction
/// error of the implied clean estimate first drops below `err_threshold`.
///
/// Trial `i` draws from sub-stream `i`; trials run in parallel with results
/// invariant to worker count.
pub fn coarse_to_fine_experiment(
    x0: &MotionSequence,
    schedule: &NoiseSchedule,
    split: BandSplit,
    err_threshold: f64,
    n_trials: usize,
    seed: RngSeed,
) -> Result<CoarseToFineOutcome> {
    if !(err_threshold > 0.0 && err_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "error threshold must lie in (0, 1], got {err_threshold}"
        )));
    }
    if n_trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    BandSplit::new(split.k_split(), x0.n_frames())?;
    let basis = DctBasis::new(x0.n_frames());
    let mut c0 = Array2::zeros(x0.data().dim());
    dct_columns(&basis, x0.data().view(), &mut c0);
    let norms = band_reference_norms(c0.view(), split)?;

    let trials: Vec<Result<(BandCrossing, ErrorTrace)>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = seed.stream(trial as u64);
            let mut trace = ErrorTrace::default();
            let mut crossing = BandCrossing {
                trial,
                low: None,
                high: None,
            };

            let shape = x0.data().dim();
            let mut noise = Array2::zeros(shape);
            fill_standard_normal(&mut noise, &mut rng);
            let eps0 = MotionSequence::new(noise)?;
            let top = schedule.len() - 1;
            let mut x_t = forward_sample(x0, schedule, top, &eps0)?;

            let mut zeta = Array2::zeros(shape);
            let mut c_hat = Array2::zeros(shape);
            let zero = MotionSequence::new(Array2::zeros(shape))?;

            for t in (1..=top).rev() {
                let eps_true = oracle_eps(x0, &x_t, schedule, t)?;
                fill_standard_normal(&mut zeta, &mut rng);
                let lambda = schedule.alpha_bar(t)?;
                let eps_hat =
                    MotionSequence::new(lambda * eps_true.data() + (1.0 - lambda) * &zeta)?;
                let x0_hat = implied_x0(&x_t, &eps_hat, schedule, t)?;
                dct_columns(&basis, x0_hat.data().view(), &mut c_hat);
                let (low_err, high_err) = band_errors(c_hat.view(), c0.view(), split, &norms);
                trace.push(t, 0, low_err, trial);
                trace.push(t, 1, high_err, trial);
                if crossing.low.is_none() && low_err < err_threshold {
                    crossing.low = Some(t);
                }
                if crossing.high.is_none() && high_err < err_threshold {
                    crossing.high = Some(t);
                }
                x_t = ddpm_reverse_step(&x_t, &eps_hat, schedule, t, &zero)?;
            }
            Ok((crossing, trace))
        })
        .collect();

    let mut crossings = Vec::with_capacity(n_trials);
    let mut trace = ErrorTrace::default();
    for item in trials {
        let (crossing, trial_trace) = item?;
        crossings.push(crossing);
        trace.extend(trial_trace);
    }
    Ok(CoarseToFineOutcome { crossings, trace })
}

/// Paired high-band reconstruction errors under clean and corrupted
/// low-frequency context.
#[derive(Debug, Clone)]
pub struct DependencyOutcome {
    pub clean_hf_error: Vec<f64>,
    pub corrupted_hf_error: Vec<f64>,
}

impl DependencyOutcome {
    pub fn mean_clean(&self) -> f64 {
        mean(&self.clean_hf_error)
    }

    pub fn mean_corrupted(&self) -> f64 {
        mean(&self.corrupted_hf_error)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One conditioned reverse trajectory; returns the final high-band error.
///
/// The high-band denoising confidence is gated by the consistency of the
/// low-band context the step conditions on: with low-band relative error
/// `e_L`, the high band uses `lambda_H = lambda(t) / (1 + e_L)`. A corrupted
/// low band therefore degrades high-band recovery, while a zero corruption
/// scale leaves the trajectory bit-identical to the clean run.
#[allow(clippy::too_many_arguments)]
fn conditioned_trajectory(
    x0: &MotionSequence,
    schedule: &NoiseSchedule,
    split: BandSplit,
    corruption_scale: f64,
    mut rng: impl rand::Rng,
    basis: &DctBasis,
    c0: ArrayView2<f64>,
    norms: &BandNorms,
) -> Result<f64> {
    let shape = x0.data().dim();
    let k_split = split.k_split();

    let mut noise = Array2::zeros(shape);
    fill_standard_normal(&mut noise, &mut rng);
    let eps0 = MotionSequence::new(noise)?;
    let top = schedule.len() - 1;
    let mut x_t = forward_sample(x0, schedule, top, &eps0)?;

    let mut zeta = Array2::zeros(shape);
    let mut xi = Array2::zeros((k_split, shape.1));
    let mut c_x = Array2::zeros(shape);
    let mut c_eps = Array2::zeros(shape);
    let mut c_zeta = Array2::zeros(shape);
    let mut c_hat = Array2::zeros(shape);
    let mut final_high_err = f64::NAN;

    for t in (1..=top).rev() {
        let eps_true = oracle_eps(x0, &x_t, schedule, t)?;
        fill_standard_normal(&mut zeta, &mut rng);
        fill_standard_normal(&mut xi, &mut rng);
        let lambda = schedule.alpha_bar(t)?;
        let scale_noise = (1.0 - lambda).sqrt();
        let scale_signal = lambda.sqrt();

        dct_columns(basis, x_t.data().view(), &mut c_x);
        dct_columns(basis, eps_true.data().view(), &mut c_eps);
        dct_columns(basis, zeta.view(), &mut c_zeta);

        // Low band: shrinkage estimate of the clean coefficients, then the
        // context corruption.
        for k in 0..k_split {
            for d in 0..shape.1 {
                let eps_hat = lambda * c_eps[[k, d]] + (1.0 - lambda) * c_zeta[[k, d]];
                c_hat[[k, d]] = (c_x[[k, d]] - scale_noise * eps_hat) / scale_signal
                    + corruption_scale * xi[[k, d]];
            }
        }

        // Low-band consistency of the context actually used downstream.
        let mut low_sq = 0.0;
        for k in 0..k_split {
            for d in 0..shape.1 {
                let diff = c_hat[[k, d]] - c0[[k, d]];
                low_sq += diff * diff;
            }
        }
        let e_low = low_sq.sqrt() / norms.low;
        let lambda_high = lambda / (1.0 + e_low);

        // High band: confidence gated by the low-band context quality.
        let mut high_sq = 0.0;
        for k in k_split..shape.0 {
            for d in 0..shape.1 {
                let eps_hat = lambda_high * c_eps[[k, d]] + (1.0 - lambda_high) * c_zeta[[k, d]];
                c_hat[[k, d]] = (c_x[[k, d]] - scale_noise * eps_hat) / scale_signal;
                let diff = c_hat[[k, d]] - c0[[k, d]];
                high_sq += diff * diff;
            }
        }
        final_high_err = high_sq.sqrt() / norms.high;

        // Reverse step from the composed clean estimate, zero injected noise.
        let abar_prev = schedule.alpha_bar(t - 1)?;
        let mut next = Array2::zeros(shape);
        idct_columns(basis, c_hat.view(), next.view_mut());
        x_t = MotionSequence::new(abar_prev.sqrt() * &next)?;
    }
    Ok(final_high_err)
}

/// Runs each trial's reverse trajectory twice from identical draws — once
/// untouched, once with the low band of the per-step clean estimate
/// perturbed by `corruption_scale` times fresh noise — and reports the
/// final high-band reconstruction errors of both conditions.
pub fn dependency_experiment(
    x0: &MotionSequence,
    schedule: &NoiseSchedule,
    split: BandSplit,
    corruption_scale: f64,
    n_trials: usize,
    seed: RngSeed,
) -> Result<DependencyOutcome> {
    if !(corruption_scale.is_finite() && corruption_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "corruption scale must be non-negative, got {corruption_scale}"
        )));
    }
    if n_trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    BandSplit::new(split.k_split(), x0.n_frames())?;
    let basis = DctBasis::new(x0.n_frames());
    let mut c0 = Array2::zeros(x0.data().dim());
    dct_columns(&basis, x0.data().view(), &mut c0);
    let norms = band_reference_norms(c0.view(), split)?;

    let pairs: Vec<Result<(f64, f64)>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let clean = conditioned_trajectory(
                x0,
                schedule,
                split,
                0.0,
                seed.stream(trial as u64),
                &basis,
                c0.view(),
                &norms,
            )?;
            let corrupted = conditioned_trajectory(
                x0,
                schedule,
                split,
                corruption_scale,
                seed.stream(trial as u64),
                &basis,
                c0.view(),
                &norms,
            )?;
            Ok((clean, corrupted))
        })
        .collect();

    let mut clean_hf_error = Vec::with_capacity(n_trials);
    let mut corrupted_hf_error = Vec::with_capacity(n_trials);
    for pair in pairs {
        let (clean, corrupted) = pair?;
        clean_hf_error.push(clean);
        corrupted_hf_error.push(corrupted);
    }
    Ok(DependencyOutcome {
        clean_hf_error,
        corrupted_hf_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::gen_powerlaw_motion;
    use crate::transform::dct_batch;
    use ndarray::Array2;
    use rand::Rng;

    fn test_schedule() -> NoiseSchedule {
        NoiseSchedule::linear_beta(100, 1e-3, 0.05).unwrap()
    }

    fn random_motion(frames: usize, dims: usize, seed: u64) -> MotionSequence {
        let mut rng = RngSeed(seed).rng();
        let data = Array2::from_shape_fn((frames, dims), |_| rng.random::<f64>() * 4.0 - 2.0);
        MotionSequence::new(data).unwrap()
    }

    #[test]
    fn forward_with_alpha_bar_one_is_identity() {
        // beta small enough that 1 - beta rounds to exactly 1.0.
        let schedule = NoiseSchedule::from_betas(vec![1e-300]).unwrap();
        assert_eq!(schedule.alpha_bar(0).unwrap(), 1.0);
        let x0 = random_motion(8, 2, 1);
        let eps = random_motion(8, 2, 2);
        let x_t = forward_sample(&x0, &schedule, 0, &eps).unwrap();
        assert_eq!(x_t.data(), x0.data());
        assert!(oracle_eps(&x0, &x_t, &schedule, 0).is_err());
    }

    #[test]
    fn forward_of_zero_signal_is_scaled_noise() {
        let schedule = test_schedule();
        let x0 = MotionSequence::new(Array2::zeros((8, 2))).unwrap();
        let eps = random_motion(8, 2, 3);
        let t = 40;
        let x_t = forward_sample(&x0, &schedule, t, &eps).unwrap();
        let b = (1.0 - schedule.alpha_bar(t).unwrap()).sqrt();
        for (xt, e) in x_t.data().iter().zip(eps.data().iter()) {
            assert!((xt - b * e).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_identity_holds_in_frequency_domain() {
        let schedule = test_schedule();
        let x0 = random_motion(32, 3, 4);
        let eps = random_motion(32, 3, 5);
        let t = 60;
        let x_t = forward_sample(&x0, &schedule, t, &eps).unwrap();
        let abar = schedule.alpha_bar(t).unwrap();

        let lhs = dct_batch(&x_t);
        let c0 = dct_batch(&x0);
        let ce = dct_batch(&eps);
        for k in 0..32 {
            for d in 0..3 {
                let rhs =
                    abar.sqrt() * c0.coeffs()[[k, d]] + (1.0 - abar).sqrt() * ce.coeffs()[[k, d]];
                assert!((lhs.coeffs()[[k, d]] - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let schedule = test_schedule();
        let x0 = random_motion(8, 2, 1);
        let eps = random_motion(8, 3, 2);
        assert!(forward_sample(&x0, &schedule, 0, &eps).is_err());
    }

    #[test]
    fn oracle_recovers_injected_noise() {
        let schedule = test_schedule();
        let x0 = random_motion(16, 2, 7);
        let eps = random_motion(16, 2, 8);
        let t = 55;
        let x_t = forward_sample(&x0, &schedule, t, &eps).unwrap();
        let recovered = oracle_eps(&x0, &x_t, &schedule, t).unwrap();
        for (a, b) in recovered.data().iter().zip(eps.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let rebuilt = forward_sample(&x0, &schedule, t, &recovered).unwrap();
        for (a, b) in rebuilt.data().iter().zip(x_t.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_of_noiseless_sample_is_zero() {
        let schedule = test_schedule();
        let x0 = random_motion(8, 1, 9);
        let t = 20;
        let abar = schedule.alpha_bar(t).unwrap();
        let x_t = MotionSequence::new(abar.sqrt() * x0.data()).unwrap();
        let eps = oracle_eps(&x0, &x_t, &schedule, t).unwrap();
        for v in eps.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_round_trip_on_random_cases() {
        let schedule = test_schedule();
        let mut max_err: f64 = 0.0;
        for case in 0..100u64 {
            let x0 = random_motion(12, 2, 100 + case);
            let eps = random_motion(12, 2, 200 + case);
            let t = (case as usize * 7) % 100;
            let x_t = forward_sample(&x0, &schedule, t, &eps).unwrap();
            let recovered = oracle_eps(&x0, &x_t, &schedule, t).unwrap();
            for (a, b) in recovered.data().iter().zip(eps.data().iter()) {
                max_err = max_err.max((a - b).abs());
            }
        }
        assert!(max_err < 1e-10, "max oracle error {max_err}");
    }

    #[test]
    fn reverse_step_with_oracle_noise_lands_on_scaled_clean_signal() {
        let schedule = test_schedule();
        let x0 = random_motion(16, 2, 10);
        let eps = random_motion(16, 2, 11);
        let t = 70;
        let x_t = forward_sample(&x0, &schedule, t, &eps).unwrap();
        let eps_true = oracle_eps(&x0, &x_t, &schedule, t).unwrap();
        let zero = MotionSequence::new(Array2::zeros((16, 2))).unwrap();
        let prev = ddpm_reverse_step(&x_t, &eps_true, &schedule, t, &zero).unwrap();
        let scale = schedule.alpha_bar(t - 1).unwrap().sqrt();
        for (p, x) in prev.data().iter().zip(x0.data().iter()) {
            assert!((p - scale * x).abs() < 1e-10);
        }
    }

    #[test]
    fn reverse_step_with_zero_prediction_rescales() {
        let schedule = test_schedule();
        let x_t = random_motion(8, 2, 12);
        let zero = MotionSequence::new(Array2::zeros((8, 2))).unwrap();
        let t = 30;
        let prev = ddpm_reverse_step(&x_t, &zero, &schedule, t, &zero).unwrap();
        let scale = (schedule.alpha_bar(t - 1).unwrap() / schedule.alpha_bar(t).unwrap()).sqrt();
        for (p, x) in prev.data().iter().zip(x_t.data().iter()) {
            assert!((p - scale * x).abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_step_rejects_t_zero() {
        let schedule = test_schedule();
        let x = random_motion(8, 2, 13);
        let zero = MotionSequence::new(Array2::zeros((8, 2))).unwrap();
        assert!(ddpm_reverse_step(&x, &zero, &schedule, 0, &zero).is_err());
    }

    #[test]
    fn full_oracle_reverse_telescopes_to_scaled_x0() {
        // Each oracle step maps x_t to sqrt(abar_{t-1}) x0, so the walk from
        // the top ends at sqrt(abar_0) x0 exactly.
        let schedule = test_schedule();
        let x0 = random_motion(16, 2, 14);
        let eps = random_motion(16, 2, 15);
        let top = schedule.len() - 1;
        let mut x_t = forward_sample(&x0, &schedule, top, &eps).unwrap();
        let zero = MotionSequence::new(Array2::zeros((16, 2))).unwrap();
        for t in (1..=top).rev() {
            let eps_true = oracle_eps(&x0, &x_t, &schedule, t).unwrap();
            x_t = ddpm_reverse_step(&x_t, &eps_true, &schedule, t, &zero).unwrap();
        }
        let scale = schedule.alpha_bar(0).unwrap().sqrt();
        for (a, b) in x_t.data().iter().zip(x0.data().iter()) {
            assert!((a - scale * b).abs() < 1e-9);
        }
    }

    #[test]
    fn implied_x0_matches_clean_signal_under_oracle() {
        let schedule = test_schedule();
        let x0 = random_motion(8, 1, 16);
        let eps = random_motion(8, 1, 17);
        let t = 45;
        let x_t = forward_sample(&x0, &schedule, t, &eps).unwrap();
        let eps_true = oracle_eps(&x0, &x_t, &schedule, t).unwrap();
        let est = implied_x0(&x_t, &eps_true, &schedule, t).unwrap();
        for (a, b) in est.data().iter().zip(x0.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn coarse_to_fine_low_band_crosses_no_later() {
        let x0 = gen_powerlaw_motion(64, 1, 2.0, RngSeed(40)).unwrap();
        let schedule = NoiseSchedule::linear_beta(300, 1e-4, 0.03).unwrap();
        let split = BandSplit::new(8, 64).unwrap();
        let outcome =
            coarse_to_fine_experiment(&x0, &schedule, split, 0.3, 5, RngSeed(77)).unwrap();
        assert_eq!(outcome.crossings.len(), 5);
        assert!(
            outcome.ordering_holds(),
            "crossings: {:?}",
            outcome.crossings
        );
        let (low, high) = outcome.mean_crossings();
        assert!(low.unwrap() >= high.unwrap());
    }

    #[test]
    fn coarse_to_fine_is_deterministic() {
        let x0 = gen_powerlaw_motion(32, 1, 2.0, RngSeed(41)).unwrap();
        let schedule = NoiseSchedule::linear_beta(80, 1e-3, 0.05).unwrap();
        let split = BandSplit::new(8, 32).unwrap();
        let a = coarse_to_fine_experiment(&x0, &schedule, split, 0.3, 3, RngSeed(5)).unwrap();
        let b = coarse_to_fine_experiment(&x0, &schedule, split, 0.3, 3, RngSeed(5)).unwrap();
        assert_eq!(a.crossings, b.crossings);
        assert_eq!(a.trace.error, b.trace.error);
    }

    #[test]
    fn coarse_to_fine_rejects_zero_band_energy() {
        // Constant clip: all energy at k = 0, none in the high band.
        let constant = MotionSequence::new(Array2::from_elem((16, 1), 2.0)).unwrap();
        let schedule = test_schedule();
        let split = BandSplit::new(4, 16).unwrap();
        assert!(matches!(
            coarse_to_fine_experiment(&constant, &schedule, split, 0.3, 2, RngSeed(0)),
            Err(Error::ZeroBandEnergy { band: "high" })
        ));
    }

    #[test]
    fn band_split_bounds() {
        assert!(BandSplit::new(0, 16).is_err());
        assert!(BandSplit::new(16, 16).is_err());
        assert!(BandSplit::new(15, 16).is_ok());
    }

    #[test]
    fn dependency_zero_corruption_changes_nothing() {
        let x0 = gen_powerlaw_motion(32, 1, 2.0, RngSeed(42)).unwrap();
        let schedule = NoiseSchedule::linear_beta(60, 1e-3, 0.05).unwrap();
        let split = BandSplit::new(8, 32).unwrap();
        let outcome = dependency_experiment(&x0, &schedule, split, 0.0, 4, RngSeed(9)).unwrap();
        for (c, k) in outcome
            .clean_hf_error
            .iter()
            .zip(outcome.corrupted_hf_error.iter())
        {
            assert_eq!(c, k);
        }
        assert_eq!(outcome.mean_corrupted() - outcome.mean_clean(), 0.0);
    }

    #[test]
    fn dependency_corruption_degrades_high_band() {
        let x0 = gen_powerlaw_motion(64, 1, 2.0, RngSeed(43)).unwrap();
        let schedule = NoiseSchedule::linear_beta(200, 1e-4, 0.03).unwrap();
        let split = BandSplit::new(16, 64).unwrap();
        let outcome = dependency_experiment(&x0, &schedule, split, 1.0, 5, RngSeed(10)).unwrap();
        assert!(
            outcome.mean_corrupted() > outcome.mean_clean(),
            "corrupted {} vs clean {}",
            outcome.mean_corrupted(),
            outcome.mean_clean()
        );
    }

    #[test]
    fn dependency_single_trial_is_deterministic() {
        let x0 = gen_powerlaw_motion(32, 1, 2.0, RngSeed(44)).unwrap();
        let schedule = NoiseSchedule::linear_beta(50, 1e-3, 0.05).unwrap();
        let split = BandSplit::new(8, 32).unwrap();
        let a = dependency_experiment(&x0, &schedule, split, 1.0, 1, RngSeed(11)).unwrap();
        let b = dependency_experiment(&x0, &schedule, split, 1.0, 1, RngSeed(11)).unwrap();
        assert_eq!(a.clean_hf_error, b.clean_hf_error);
        assert_eq!(a.corrupted_hf_error, b.corrupted_hf_error);
    }
}
