//! Orthonormal DCT-II / IDCT along the time axis and low-frequency filtering.
//!
//! The transform pair is the direct O(N^2) evaluation of
//!
//! ```text
//! v_f[k] = a(k) * sum_n v[n] cos(pi (2n+1) k / 2N),   a(0) = sqrt(1/N), a(k>0) = sqrt(2/N)
//! v[n]   = sum_k a(k) v_f[k] cos(pi (2n+1) k / 2N)
//! ```
//!
//! which makes the basis matrix orthonormal: round trips are exact to
//! floating-point precision and Parseval holds per column.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::signal::MotionSequence;

/// DCT coefficients of one signal, frequency index `k` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Array1<f64>,
}

impl Spectrum {
    pub fn new(coeffs: Array1<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument("empty spectrum".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &Array1<f64> {
        &self.coeffs
    }
}

/// Per-dimension DCT coefficients of a motion clip, shape `(N, D_dims)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumBatch {
    coeffs: Array2<f64>,
}

impl SpectrumBatch {
    pub fn new(coeffs: Array2<f64>) -> Result<Self> {
        if coeffs.nrows() == 0 || coeffs.ncols() == 0 {
            return Err(Error::InvalidArgument("empty spectrum batch".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn n_freqs(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }
}

/// Precomputed orthonormal DCT-II basis for signals of length `n`.
///
/// `matrix()[k][n]` holds `a(k) cos(pi (2n+1) k / 2N)`; forward and inverse
/// are plain row sums against it, preserving the reference summation order.
#[derive(Debug, Clone)]
pub struct DctBasis {
    n: usize,
    rows: Array2<f64>,
}

impl DctBasis {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "basis needs at least one sample");
        let mut rows = Array2::zeros((n, n));
        let norm0 = (1.0 / n as f64).sqrt();
        let norm = (2.0 / n as f64).sqrt();
        for k in 0..n {
            let a = if k == 0 { norm0 } else { norm };
            for j in 0..n {
                rows[[k, j]] = a * (PI * (2 * j + 1) as f64 * k as f64 / (2 * n) as f64).cos();
            }
        }
        Self { n, rows }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.rows
    }

    /// `v_f[k] = sum_n G[k,n] v[n]`.
    pub fn forward(&self, signal: &[f64]) -> Vec<f64> {
        debug_assert_eq!(signal.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (k, o) in out.iter_mut().enumerate() {
            let row = self.rows.row(k);
            let mut acc = 0.0;
            for (g, v) in row.iter().zip(signal) {
                acc += g * v;
            }
            *o = acc;
        }
        out
    }

    /// `v[n] = sum_k G[k,n] v_f[k]`.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (k, c) in coeffs.iter().enumerate() {
            let row = self.rows.row(k);
            for (o, g) in out.iter_mut().zip(row.iter()) {
                *o += g * c;
            }
        }
        out
    }
}

/// Orthonormal DCT-II of a signal.
pub fn dct2(signal: ArrayView1<f64>) -> Result<Spectrum> {
    if signal.is_empty() {
        return Err(Error::InvalidArgument("empty signal".into()));
    }
    if !signal.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("signal".into()));
    }
    let basis = DctBasis::new(signal.len());
    let buf: Vec<f64> = signal.iter().copied().collect();
    Ok(Spectrum {
        coeffs: Array1::from(basis.forward(&buf)),
    })
}

/// Inverse transform; exact round trip with [`dct2`] up to rounding.
pub fn idct(spectrum: &Spectrum) -> Array1<f64> {
    let basis = DctBasis::new(spectrum.len());
    let buf: Vec<f64> = spectrum.coeffs.iter().copied().collect();
    Array1::from(basis.inverse(&buf))
}

/// Columnwise DCT of a motion clip; time is the transform axis.
pub fn dct_batch(motion: &MotionSequence) -> SpectrumBatch {
    let n = motion.n_frames();
    let d = motion.n_dims();
    let basis = DctBasis::new(n);
    let mut coeffs = Array2::zeros((n, d));
    let mut col = vec![0.0; n];
    for j in 0..d {
        for (i, c) in col.iter_mut().enumerate() {
            *c = motion.data()[[i, j]];
        }
        let f = basis.forward(&col);
        for (k, v) in f.iter().enumerate() {
            coeffs[[k, j]] = *v;
        }
    }
    SpectrumBatch { coeffs }
}

/// Inverse of [`dct_batch`].
pub fn idct_batch(batch: &SpectrumBatch) -> Result<MotionSequence> {
    let n = batch.n_freqs();
    let d = batch.n_dims();
    let basis = DctBasis::new(n);
    let mut data = Array2::zeros((n, d));
    let mut col = vec![0.0; n];
    for j in 0..d {
        for (k, c) in col.iter_mut().enumerate() {
            *c = batch.coeffs[[k, j]];
        }
        let v = basis.inverse(&col);
        for (i, x) in v.iter().enumerate() {
            data[[i, j]] = *x;
        }
    }
    MotionSequence::new(data)
}

/// Keeps the first `k_keep` DCT coefficients per dimension and reconstructs.
///
/// `k_keep == T_frames` is the identity up to rounding; `k_keep == 0` yields
/// the all-zero clip.
pub fn filter_lowfreq(motion: &MotionSequence, k_keep: usize) -> Result<MotionSequence> {
    let n = motion.n_frames();
    if k_keep > n {
        return Err(Error::InvalidArgument(format!(
            "retained coefficient count {k_keep} exceeds frame count {n}"
        )));
    }
    let mut batch = dct_batch(motion);
    for k in k_keep..n {
        for j in 0..batch.coeffs.ncols() {
            batch.coeffs[[k, j]] = 0.0;
        }
    }
    let filtered = idct_batch(&batch)?;
    MotionSequence::with_frame_rate(filtered.into_data(), motion.frame_rate_hz())
}

/// Per-frequency energy summed over dimensions: `result[k] = sum_d c[k,d]^2`.
pub fn spectral_energy(batch: &SpectrumBatch) -> Array1<f64> {
    let mut out = Array1::zeros(batch.n_freqs());
    for k in 0..batch.n_freqs() {
        let mut acc = 0.0;
        for d in 0..batch.n_dims() {
            let c = batch.coeffs[[k, d]];
            acc += c * c;
        }
        out[k] = acc;
    }
    out
}

/// Splits `0..n` into `bands` contiguous near-equal ranges (first
/// `n % bands` ranges get the extra element). Returns `(start, end)` pairs,
/// end exclusive.
pub(crate) fn contiguous_bins(n: usize, bands: usize) -> Vec<(usize, usize)> {
    debug_assert!(bands >= 1 && bands <= n);
    let base = n / bands;
    let extra = n % bands;
    let mut out = Vec::with_capacity(bands);
    let mut start = 0;
    for b in 0..bands {
        let len = base + usize::from(b < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}
