//! Motion sequences, frame masks, CSV ingestion, and synthetic signals.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::transform::DctBasis;

/// One motion clip: `(T_frames, D_dims)` array of finite reals, time along
/// axis 0. The frame rate is inert metadata carried for reporting only.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    data: Array2<f64>,
    frame_rate_hz: Option<f64>,
}

impl MotionSequence {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        Self::with_frame_rate(data, None)
    }

    pub fn with_frame_rate(data: Array2<f64>, frame_rate_hz: Option<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "motion must have at least one frame and one dimension, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("motion data".into()));
        }
        if let Some(hz) = frame_rate_hz {
            if !(hz.is_finite() && hz > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "frame rate must be positive, got {hz}"
                )));
            }
        }
        Ok(Self {
            data,
            frame_rate_hz,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn frame_rate_hz(&self) -> Option<f64> {
        self.frame_rate_hz
    }

    /// Checks that `other` has the same `(T, D)` shape.
    pub fn check_same_shape(&self, other: &MotionSequence) -> Result<()> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.n_frames(), self.n_dims()),
                got: format!("{}x{}", other.n_frames(), other.n_dims()),
            });
        }
        Ok(())
    }
}

/// Binary validity mask over frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    bits: Vec<bool>,
}

impl FrameMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// All-ones mask of length `len`.
    pub fn full(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Validates use against a sequence of `n_frames` frames in a loss:
    /// lengths must match and at least one bit must be set.
    pub fn check_for_loss(&self, n_frames: usize) -> Result<()> {
        if self.len() != n_frames {
            return Err(Error::ShapeMismatch {
                expected: format!("mask of length {n_frames}"),
                got: format!("mask of length {}", self.len()),
            });
        }
        if self.count_set() == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(())
    }
}

/// Loads a motion sequence from a comma-separated file, one row per frame.
///
/// Rows must be rectangular and every cell must parse as a finite real.
/// Errors carry 1-based line/column positions; the header line, when
/// present, counts as line 1.
pub fn load_motion_csv(path: &Path, has_header: bool) -> Result<MotionSequence> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let skip = usize::from(has_header);

    for (idx, line) in text.lines().enumerate().skip(skip) {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let cells: Vec<&str> = line.split(',').collect();
        let expected = *width.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: idx + 1,
                expected,
                found: cells.len(),
            });
        }
        let mut row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let trimmed = cell.trim();
            match trimmed.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::BadCell {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        column: col + 1,
                        cell: trimmed.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::NoRows {
            path: path.to_path_buf(),
        });
    }

    let n = rows.len();
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((n, d), flat).expect("rectangular by construction");
    MotionSequence::new(data)
}

/// Synthesizes a motion clip whose per-dimension DCT power is exactly
/// `(k+1)^{-alpha}`.
///
/// Coefficient magnitudes are deterministic; only the signs are drawn from
/// the seed (row-major over `(dim, k)`), so spectral assertions on the
/// output are exact. The clip is returned in the time domain.
pub fn gen_powerlaw_motion(
    n_frames: usize,
    n_dims: usize,
    alpha: f64,
    seed: RngSeed,
) -> Result<MotionSequence> {
    if n_frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 frames, got {n_frames}"
        )));
    }
    if n_dims == 0 {
        return Err(Error::InvalidArgument("need at least 1 dimension".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }

    let basis = DctBasis::new(n_frames);
    let mut rng = seed.rng();
    let mut data = Array2::zeros((n_frames, n_dims));
    let mut coeffs = vec![0.0; n_frames];
    for d in 0..n_dims {
        for (k, c) in coeffs.iter_mut().enumerate() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *c = sign * ((k + 1) as f64).powf(-alpha / 2.0);
        }
        let col = basis.inverse(&coeffs);
        for (n, v) in col.iter().enumerate() {
            data[[n, d]] = *v;
        }
    }
    MotionSequence::new(data)
}

/// Writes named columns as a comma-separated table with a header row.
///
/// Values use the shortest representation that parses back to the same
/// double, UNIX newlines, no trailing newline.
pub fn save_table(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let Some((_, first)) = columns.first() else {
        return Err(Error::NoColumns);
    };
    let len = first.len();
    for (name, col) in columns {
        if col.len() != len {
            return Err(Error::ColumnLengthMismatch {
                name: (*name).to_string(),
                len: col.len(),
                expected: len,
            });
        }
    }

    let mut out = String::new();
    let header: Vec<&str> = columns.iter().map(|(name, _)| *name).collect();
    out.push_str(&header.join(","));
    for row in 0..len {
        out.push('\n');
        for (i, (_, col)) in columns.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{}", col[row]).expect("string write");
        }
    }

    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
