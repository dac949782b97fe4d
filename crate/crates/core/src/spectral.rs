//! Power spectral density of diffused signals, per-frequency SNR, the
//! recovery-time solver, and Monte Carlo verification of the additive-PSD
//! identity and the vanishing cross term.
//!
//! Noise is injected in the time domain with per-frame variance equal to the
//! accumulated noise energy; because the DCT is orthonormal, the
//! frequency-domain variance is identical, which is what the additive
//! identity `S_t[k] = |c0[k]|^2 + energy(t)` needs.

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::schedule::GProfile;
use crate::signal::MotionSequence;
use crate::transform::{contiguous_bins, dct2, dct_batch, spectral_energy, DctBasis};

/// Execution mode for the Monte Carlo estimators.
///
/// `Sequential` walks one generator (stream 0) over all samples.
/// `PreSplit` assigns fixed 4096-sample chunks to streams 1, 2, ... and sums
/// chunk partials in chunk order, so the result does not depend on how many
/// workers execute the chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum McMode {
    #[default]
    Sequential,
    PreSplit,
}

const CHUNK: usize = 4096;

/// Per-frequency power, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdCurve {
    power: Array1<f64>,
}

impl PsdCurve {
    pub fn new(power: Array1<f64>) -> Result<Self> {
        if power.is_empty() {
            return Err(Error::InvalidArgument("empty PSD".into()));
        }
        if !power.iter().all(|p| p.is_finite() && *p >= 0.0) {
            return Err(Error::InvalidArgument(
                "PSD entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { power })
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn power(&self) -> &Array1<f64> {
        &self.power
    }
}

/// Per-frequency signal-to-noise ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrCurve {
    snr: Array1<f64>,
}

impl SnrCurve {
    pub fn len(&self) -> usize {
        self.snr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snr.is_empty()
    }

    pub fn snr(&self) -> &Array1<f64> {
        &self.snr
    }
}

/// Initial PSD of a single-dimension clip: squared DCT coefficients.
pub fn initial_psd(x0: &MotionSequence) -> Result<PsdCurve> {
    require_single_dim(x0)?;
    let spectrum = dct2(x0.data().column(0))?;
    PsdCurve::new(spectrum.coeffs().mapv(|c| c * c))
}

/// Additive PSD of the diffused signal: initial power plus accumulated noise
/// energy, identical at every frequency.
pub fn theoretical_psd(power0: &PsdCurve, profile: &GProfile, t: usize) -> Result<PsdCurve> {
    let energy = profile.noise_energy(t)?;
    PsdCurve::new(power0.power().mapv(|p| p + energy))
}

fn require_single_dim(x0: &MotionSequence) -> Result<()> {
    if x0.n_dims() != 1 {
        return Err(Error::ShapeMismatch {
            expected: "single-dimension motion".into(),
            got: format!("{} dims", x0.n_dims()),
        });
    }
    Ok(())
}

fn accumulate_psd(
    basis: &DctBasis,
    x0: &[f64],
    sigma: f64,
    n_samples: usize,
    mut rng: impl rand::Rng,
) -> Vec<f64> {
    let n = x0.len();
    let mut acc = vec![0.0; n];
    let mut noisy = vec![0.0; n];
    for _ in 0..n_samples {
        for (dst, x) in noisy.iter_mut().zip(x0) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *dst = x + sigma * z;
        }
        let coeffs = basis.forward(&noisy);
        for (a, c) in acc.iter_mut().zip(&coeffs) {
            *a += c * c;
        }
    }
    acc
}

/// Monte Carlo estimate of the diffused PSD: mean of `|dct(x0 + eta)|^2`
/// over `n_samples` draws of time-domain white noise with per-frame variance
/// equal to the accumulated noise energy at step `t`.
pub fn estimate_psd_mc(
    x0: &MotionSequence,
    profile: &GProfile,
    t: usize,
    n_samples: usize,
    seed: RngSeed,
    mode: McMode,
) -> Result<PsdCurve> {
    require_single_dim(x0)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let sigma = profile.noise_energy(t)?.sqrt();
    let basis = DctBasis::new(x0.n_frames());
    let signal: Vec<f64> = x0.data().column(0).iter().copied().collect();

    let acc = match mode {
        McMode::Sequential => accumulate_psd(&basis, &signal, sigma, n_samples, seed.rng()),
        McMode::PreSplit => {
            let n_chunks = n_samples.div_ceil(CHUNK);
            let partials: Vec<Vec<f64>> = (0..n_chunks)
                .into_par_iter()
                .map(|chunk| {
                    let count = CHUNK.min(n_samples - chunk * CHUNK);
                    accumulate_psd(&basis, &signal, sigma, count, seed.stream(1 + chunk as u64))
                })
                .collect();
            let mut acc = vec![0.0; signal.len()];
            for partial in partials {
                for (a, p) in acc.iter_mut().zip(&partial) {
                    *a += p;
                }
            }
            acc
        }
    };

    let scale = 1.0 / n_samples as f64;
    PsdCurve::new(Array1::from(acc).mapv(|a| a * scale))
}

/// Per-frequency SNR: initial power over accumulated noise energy at `t`.
pub fn snr_curve(power0: &PsdCurve, profile: &GProfile, t: usize) -> Result<SnrCurve> {
    let energy = profile.noise_energy(t)?;
    if energy <= 0.0 {
        return Err(Error::ZeroNoise { step: t });
    }
    Ok(SnrCurve {
        snr: power0.power().mapv(|p| p / energy),
    })
}

fn check_recovery_args(power0_at_k: f64, gamma: f64) -> Result<()> {
    if !(power0_at_k.is_finite() && power0_at_k > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "initial power must be positive, got {power0_at_k}"
        )));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "SNR threshold must be positive, got {gamma}"
        )));
    }
    Ok(())
}

/// Smallest step `t` at which `power0_at_k / cumulative[t] <= gamma`, found
/// by bisection over the non-decreasing cumulative noise energy. `None` if
/// the threshold is never reached within the profile.
///
/// The crossing predicate is evaluated as `cumulative[t] >= power / gamma`
/// so that this and [`recovery_time_scan`] share one comparison.
pub fn recovery_time(power0_at_k: f64, profile: &GProfile, gamma: f64) -> Result<Option<usize>> {
    check_recovery_args(power0_at_k, gamma)?;
    let target = power0_at_k / gamma;
    let idx = profile.cumulative().partition_point(|c| *c < target);
    Ok((idx < profile.len()).then_some(idx))
}

/// Linear-scan reference for [`recovery_time`]; same contract.
pub fn recovery_time_scan(
    power0_at_k: f64,
    profile: &GProfile,
    gamma: f64,
) -> Result<Option<usize>> {
    check_recovery_args(power0_at_k, gamma)?;
    let target = power0_at_k / gamma;
    Ok(profile.cumulative().iter().position(|c| *c >= target))
}

/// Empirical cross term between the clean spectrum and the noise spectrum,
/// with per-bin standard errors from the same run.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTerm {
    pub mean: Array1<f64>,
    pub std_error: Array1<f64>,
    pub n_samples: usize,
}

impl CrossTerm {
    /// Largest `|mean| / std_error` over bins, with `0/0` counted as 0.
    pub fn max_abs_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(self.std_error.iter())
            .map(|(m, se)| {
                if *se == 0.0 {
                    if *m == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (m / se).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

fn accumulate_cross(
    basis: &DctBasis,
    c0: &[f64],
    sigma: f64,
    n_samples: usize,
    mut rng: impl rand::Rng,
) -> (Vec<f64>, Vec<f64>) {
    let n = c0.len();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut eta = vec![0.0; n];
    for _ in 0..n_samples {
        for dst in eta.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *dst = sigma * z;
        }
        let noise_coeffs = basis.forward(&eta);
        for ((s, sq), (c, e)) in sum
            .iter_mut()
            .zip(sum_sq.iter_mut())
            .zip(c0.iter().zip(&noise_coeffs))
        {
            let w = c * e;
            *s += w;
            *sq += w * w;
        }
    }
    (sum, sum_sq)
}

/// Per-frequency sample mean of `dct(x0)[k] * dct(eta)[k]` over noise draws;
/// vanishes in expectation because the noise has zero mean.
pub fn cross_term_mc(
    x0: &MotionSequence,
    profile: &GProfile,
    t: usize,
    n_samples: usize,
    seed: RngSeed,
    mode: McMode,
) -> Result<CrossTerm> {
    require_single_dim(x0)?;
    if n_samples < 2 {
        return Err(Error::InvalidArgument(
            "need at least two samples for a standard error".into(),
        ));
    }
    let sigma = profile.noise_energy(t)?.sqrt();
    let n = x0.n_frames();
    let basis = DctBasis::new(n);
    let c0: Vec<f64> = dct2(x0.data().column(0))?.coeffs().iter().copied().collect();

    let (sum, sum_sq) = match mode {
        McMode::Sequential => accumulate_cross(&basis, &c0, sigma, n_samples, seed.rng()),
        McMode::PreSplit => {
            let n_chunks = n_samples.div_ceil(CHUNK);
            let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
                .into_par_iter()
                .map(|chunk| {
                    let count = CHUNK.min(n_samples - chunk * CHUNK);
                    accumulate_cross(&basis, &c0, sigma, count, seed.stream(1 + chunk as u64))
                })
                .collect();
            let mut sum = vec![0.0; n];
            let mut sum_sq = vec![0.0; n];
            for (s, sq) in partials {
                for (a, b) in sum.iter_mut().zip(&s) {
                    *a += b;
                }
                for (a, b) in sum_sq.iter_mut().zip(&sq) {
                    *a += b;
                }
            }
            (sum, sum_sq)
        }
    };

    let nf = n_samples as f64;
    let mut mean = Array1::zeros(n);
    let mut std_error = Array1::zeros(n);
    for k in 0..n {
        let m = sum[k] / nf;
        // Sample variance with Bessel's correction; clamp tiny negatives
        // from cancellation.
        let var = ((sum_sq[k] - nf * m * m) / (nf - 1.0)).max(0.0);
        mean[k] = m;
        std_error[k] = (var / nf).sqrt();
    }
    Ok(CrossTerm {
        mean,
        std_error,
        n_samples,
    })
}

/// Energy distribution over contiguous near-equal frequency bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// `(start, end)` coefficient ranges per band, end exclusive.
    pub bands: Vec<(usize, usize)>,
    /// Per-frequency energy summed over dimensions.
    pub per_freq_energy: Array1<f64>,
    /// Total energy per band.
    pub band_energy: Vec<f64>,
    /// Per-band energy fractions summing to 1; `None` for a zero clip.
    pub fractions: Option<Vec<f64>>,
    pub total_energy: f64,
}

/// Partitions the frequency axis into `n_bands` contiguous near-equal bands
/// and reports each band's share of total spectral energy.
pub fn spectrum_report(motion: &MotionSequence, n_bands: usize) -> Result<SpectrumReport> {
    if n_bands == 0 || n_bands > motion.n_frames() {
        return Err(Error::InvalidArgument(format!(
            "band count must be in 1..={}, got {n_bands}",
            motion.n_frames()
        )));
    }
    let per_freq_energy = spectral_energy(&dct_batch(motion));
    let bands = contiguous_bins(motion.n_frames(), n_bands);
    let band_energy: Vec<f64> = bands
        .iter()
        .map(|(s, e)| per_freq_energy.slice(ndarray::s![*s..*e]).sum())
        .collect();
    let total_energy: f64 = band_energy.iter().sum();
    let fractions =
        (total_energy > 0.0).then(|| band_energy.iter().map(|e| e / total_energy).collect());
    Ok(SpectrumReport {
        bands,
        per_freq_energy,
        band_energy,
        fractions,
        total_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::gen_powerlaw_motion;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn powerlaw_psd(n: usize, alpha: f64) -> PsdCurve {
        PsdCurve::new(Array1::from_iter(
            (0..n).map(|k| ((k + 1) as f64).powf(-alpha)),
        ))
        .unwrap()
    }

    #[test]
    fn theoretical_psd_is_additive() {
        let profile = GProfile::constant(10, 1.0).unwrap();

        let zeros = PsdCurve::new(Array1::zeros(8)).unwrap();
        let at4 = theoretical_psd(&zeros, &profile, 4).unwrap();
        assert!(at4.power().iter().all(|p| *p == 5.0));

        let base = powerlaw_psd(8, 2.0);
        let silent = GProfile::constant(10, 0.0).unwrap();
        let same = theoretical_psd(&base, &silent, 3).unwrap();
        assert_eq!(same.power(), base.power());

        let shifted = theoretical_psd(&base, &profile, 0).unwrap();
        for k in 0..8 {
            assert_eq!(shifted.power()[k], base.power()[k] + 1.0);
        }
    }

    #[test]
    fn mc_with_zero_profile_is_exact() {
        let x0 = gen_powerlaw_motion(16, 1, 2.0, RngSeed(4)).unwrap();
        let profile = GProfile::constant(5, 0.0).unwrap();
        let est = estimate_psd_mc(&x0, &profile, 2, 1, RngSeed(9), McMode::Sequential).unwrap();
        let exact = initial_psd(&x0).unwrap();
        for (a, b) in est.power().iter().zip(exact.power().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mc_pure_noise_concentrates() {
        // x0 = 0, accumulated energy 10: every bin should sit near 10.
        let x0 = MotionSequence::new(Array2::zeros((32, 1))).unwrap();
        let profile = GProfile::constant(10, 1.0).unwrap();
        let est =
            estimate_psd_mc(&x0, &profile, 9, 20_000, RngSeed(11), McMode::Sequential).unwrap();
        for p in est.power() {
            assert!((p - 10.0).abs() / 10.0 < 0.1, "bin power {p}");
        }
    }

    #[test]
    fn mc_is_deterministic_per_seed() {
        let x0 = gen_powerlaw_motion(16, 1, 2.0, RngSeed(4)).unwrap();
        let profile = GProfile::constant(5, 1.0).unwrap();
        let a = estimate_psd_mc(&x0, &profile, 4, 500, RngSeed(3), McMode::Sequential).unwrap();
        let b = estimate_psd_mc(&x0, &profile, 4, 500, RngSeed(3), McMode::Sequential).unwrap();
        assert_eq!(a.power(), b.power());
    }

    #[test]
    fn mc_presplit_is_invariant_to_worker_count() {
        let x0 = gen_powerlaw_motion(16, 1, 2.0, RngSeed(4)).unwrap();
        let profile = GProfile::constant(5, 1.0).unwrap();
        let wide = estimate_psd_mc(&x0, &profile, 4, 10_000, RngSeed(3), McMode::PreSplit).unwrap();
        let narrow_pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let narrow = narrow_pool
            .install(|| estimate_psd_mc(&x0, &profile, 4, 10_000, RngSeed(3), McMode::PreSplit))
            .unwrap();
        assert_eq!(wide.power(), narrow.power());
    }

    #[test]
    fn snr_is_elementwise_division() {
        let base = powerlaw_psd(6, 2.0);
        let profile = GProfile::constant(4, 1.0).unwrap();
        let snr = snr_curve(&base, &profile, 1).unwrap();
        for k in 0..6 {
            assert_eq!(snr.snr()[k], ((k + 1) as f64).powi(-2) / 2.0);
        }

        // Doubling accumulated energy halves each entry.
        let snr4 = snr_curve(&base, &profile, 3).unwrap();
        for k in 0..6 {
            assert!((snr4.snr()[k] - snr.snr()[k] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn snr_with_zero_noise_is_an_error() {
        let base = powerlaw_psd(6, 2.0);
        let profile = GProfile::constant(4, 0.0).unwrap();
        assert!(matches!(
            snr_curve(&base, &profile, 2),
            Err(Error::ZeroNoise { step: 2 })
        ));
    }

    #[test]
    fn snr_of_decreasing_power_is_strictly_decreasing() {
        for alpha in [1.0, 2.0, 3.0] {
            let base = powerlaw_psd(64, alpha);
            let profile = GProfile::constant(100, 0.35).unwrap();
            let snr = snr_curve(&base, &profile, 57).unwrap();
            for k in 1..64 {
                assert!(snr.snr()[k] < snr.snr()[k - 1]);
            }
        }
    }

    #[test]
    fn recovery_time_discrete_crossing() {
        let profile = GProfile::constant(10, 1.0).unwrap();
        // cumulative[t] = t + 1; 4 / (t+1) <= 2 first at t = 1.
        assert_eq!(recovery_time(4.0, &profile, 2.0).unwrap(), Some(1));
        assert_eq!(recovery_time_scan(4.0, &profile, 2.0).unwrap(), Some(1));
    }

    #[test]
    fn recovery_time_never_reached() {
        let profile = GProfile::constant(10, 1.0).unwrap();
        assert_eq!(recovery_time(1e6, &profile, 1.0).unwrap(), None);
        assert_eq!(recovery_time_scan(1e6, &profile, 1.0).unwrap(), None);
    }

    #[test]
    fn recovery_time_rejects_non_positive_inputs() {
        let profile = GProfile::constant(10, 1.0).unwrap();
        assert!(recovery_time(0.0, &profile, 1.0).is_err());
        assert!(recovery_time(1.0, &profile, 0.0).is_err());
        assert!(recovery_time(-1.0, &profile, 1.0).is_err());
    }

    #[test]
    fn recovery_time_non_increasing_in_frequency() {
        let profile = GProfile::constant(200, 0.05).unwrap();
        let base = powerlaw_psd(64, 2.0);
        let times: Vec<Option<usize>> = (0..64)
            .map(|k| recovery_time(base.power()[k], &profile, 0.07).unwrap())
            .collect();
        for w in times.windows(2) {
            match (w[0], w[1]) {
                (Some(a), Some(b)) => assert!(b <= a),
                (None, Some(_)) | (None, None) => {}
                (Some(_), None) => panic!("higher frequency should not out-last a lower one"),
            }
        }
    }

    #[test]
    fn cross_term_exact_zero_cases() {
        let profile = GProfile::constant(6, 1.0).unwrap();
        let zero_x0 = MotionSequence::new(Array2::zeros((12, 1))).unwrap();
        let ct = cross_term_mc(&zero_x0, &profile, 3, 100, RngSeed(5), McMode::Sequential).unwrap();
        assert!(ct.mean.iter().all(|m| *m == 0.0));
        assert!(ct.max_abs_z() <= 4.0);

        let x0 = gen_powerlaw_motion(12, 1, 2.0, RngSeed(5)).unwrap();
        let silent = GProfile::constant(6, 0.0).unwrap();
        let ct = cross_term_mc(&x0, &silent, 3, 100, RngSeed(5), McMode::Sequential).unwrap();
        assert!(ct.mean.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn cross_term_within_standard_error_bound() {
        let x0 = gen_powerlaw_motion(32, 1, 2.0, RngSeed(21)).unwrap();
        let profile = GProfile::constant(8, 1.0).unwrap();
        let ct = cross_term_mc(&x0, &profile, 7, 20_000, RngSeed(2), McMode::Sequential).unwrap();
        assert!(ct.max_abs_z() <= 4.0, "max |z| = {}", ct.max_abs_z());
    }

    #[test]
    fn report_constant_motion_single_band() {
        let motion = MotionSequence::new(Array2::from_elem((16, 2), 3.0)).unwrap();
        let report = spectrum_report(&motion, 4).unwrap();
        let fractions = report.fractions.unwrap();
        assert!((fractions[0] - 1.0).abs() < 1e-12);
        for f in &fractions[1..] {
            assert!(f.abs() < 1e-12);
        }
    }

    #[test]
    fn report_powerlaw_low_band_dominates() {
        // Analytic oracle: partial sums of (k+1)^-2.
        let expected: f64 = {
            let low: f64 = (0..16).map(|k| ((k + 1) as f64).powi(-2)).sum();
            let total: f64 = (0..64).map(|k| ((k + 1) as f64).powi(-2)).sum();
            low / total
        };
        let motion = gen_powerlaw_motion(64, 1, 2.0, RngSeed(13)).unwrap();
        let report = spectrum_report(&motion, 4).unwrap();
        let fractions = report.fractions.unwrap();
        assert!((fractions[0] - expected).abs() < 1e-9);
        assert!(fractions[0] > 0.90);
    }

    #[test]
    fn report_zero_motion_sets_flag() {
        let motion = MotionSequence::new(Array2::zeros((16, 2))).unwrap();
        let report = spectrum_report(&motion, 4).unwrap();
        assert!(report.fractions.is_none());
        assert_eq!(report.total_energy, 0.0);
    }

    #[test]
    fn report_rejects_too_many_bands() {
        let motion = MotionSequence::new(Array2::zeros((8, 1))).unwrap();
        assert!(spectrum_report(&motion, 9).is_err());
        assert!(spectrum_report(&motion, 0).is_err());
    }

    proptest! {
        #[test]
        fn scan_and_bisection_agree(seed in 0u64..1000) {
            let mut rng = RngSeed(seed).rng();
            let steps = rng.random_range(1usize..50);
            let g: Vec<f64> = (0..steps).map(|_| rng.random::<f64>() * 2.0).collect();
            let profile = GProfile::from_g_squared(g).unwrap();
            let power = rng.random::<f64>() * 30.0 + 1e-6;
            let gamma = rng.random::<f64>() * 3.0 + 1e-6;
            prop_assert_eq!(
                recovery_time(power, &profile, gamma).unwrap(),
                recovery_time_scan(power, &profile, gamma).unwrap()
            );
        }

        #[test]
        fn report_fractions_sum_to_one(seed in 0u64..200) {
            let mut rng = RngSeed(seed).rng();
            let frames = rng.random_range(4usize..40);
            let bands = rng.random_range(1usize..=frames.min(8));
            let motion = gen_powerlaw_motion(frames, 2, 1.5, RngSeed(seed)).unwrap();
            let report = spectrum_report(&motion, bands).unwrap();
            let sum: f64 = report.fractions.unwrap().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
