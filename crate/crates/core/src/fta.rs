//! Timestep-adaptive attention over frames: sinusoidal timestep encoding,
//! a two-layer MLP embedding, adaptive layer normalization whose scale and
//! shift are linear in the embedding, single-head self-attention over the
//! time axis, and a residual output.
//!
//! The backward pass is hand-derived; `fta_grad_check` compares it against
//! central finite differences of the scalar loss `L = 0.5 * ||forward||^2`,
//! which is the module's correctness arbiter.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::transform::{contiguous_bins, DctBasis};

/// Layer sizes of the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtaDims {
    pub pe_dim: usize,
    pub hidden_dim: usize,
    pub model_dim: usize,
}

impl FtaDims {
    fn validate(&self) -> Result<()> {
        if self.pe_dim == 0 || self.pe_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "positional encoding width must be even and positive, got {}",
                self.pe_dim
            )));
        }
        if self.hidden_dim == 0 || self.model_dim == 0 {
            return Err(Error::InvalidArgument(
                "hidden and model widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All weights of the block. Row-vector convention: an input row `x`
/// multiplies a weight of shape `(in_dim, out_dim)` from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct FtaParams {
    pub dims: FtaDims,
    /// Timestep MLP, `pe_dim -> hidden -> model_dim`, SiLU between layers.
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array1<f64>,
    /// Modulation projections, `model_dim -> model_dim`.
    pub gamma_w: Array2<f64>,
    pub gamma_b: Array1<f64>,
    pub beta_w: Array2<f64>,
    pub beta_b: Array1<f64>,
    /// Attention projections, `model_dim -> model_dim`, no bias.
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub ln_epsilon: f64,
}

/// Fixed tensor order used for initialization draws, serialization, and
/// gradient-check coordinate indexing.
const TENSOR_NAMES: [&str; 11] = [
    "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "gamma_w", "gamma_b", "beta_w", "beta_b", "w_q",
    "w_k", "w_v",
];

impl FtaParams {
    /// All-zero parameters.
    pub fn zeros(dims: FtaDims, ln_epsilon: f64) -> Result<Self> {
        dims.validate()?;
        if !(ln_epsilon.is_finite() && ln_epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "layer norm epsilon must be non-negative, got {ln_epsilon}"
            )));
        }
        let (p, h, d) = (dims.pe_dim, dims.hidden_dim, dims.model_dim);
        Ok(Self {
            dims,
            mlp_w1: Array2::zeros((p, h)),
            mlp_b1: Array1::zeros(h),
            mlp_w2: Array2::zeros((h, d)),
            mlp_b2: Array1::zeros(d),
            gamma_w: Array2::zeros((d, d)),
            gamma_b: Array1::zeros(d),
            beta_w: Array2::zeros((d, d)),
            beta_b: Array1::zeros(d),
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            ln_epsilon,
        })
    }

    /// Seeded Gaussian init at scale 0.02 with zero modulation projections,
    /// so the fresh block is plain layer norm plus attention.
    pub fn adaln_zero(dims: FtaDims, ln_epsilon: f64, seed: RngSeed) -> Result<Self> {
        let mut params = Self::dense(dims, ln_epsilon, seed)?;
        params.gamma_w.fill(0.0);
        params.gamma_b.fill(0.0);
        params.beta_w.fill(0.0);
        params.beta_b.fill(0.0);
        Ok(params)
    }

    /// Seeded Gaussian init at scale 0.02 for every tensor, modulation
    /// included. Draw order: tensors in declaration order, row-major.
    pub fn dense(dims: FtaDims, ln_epsilon: f64, seed: RngSeed) -> Result<Self> {
        let mut params = Self::zeros(dims, ln_epsilon)?;
        let mut rng = seed.rng();
        let mut fill = |t: &mut [f64]| {
            for v in t {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = 0.02 * z;
            }
        };
        for name in TENSOR_NAMES {
            fill(params.tensor_mut(name).0);
        }
        Ok(params)
    }

    pub fn model_dim(&self) -> usize {
        self.dims.model_dim
    }

    fn tensor(&self, name: &str) -> (&[f64], Vec<usize>) {
        match name {
            "mlp_w1" => (self.mlp_w1.as_slice().unwrap(), vec![self.dims.pe_dim, self.dims.hidden_dim]),
            "mlp_b1" => (self.mlp_b1.as_slice().unwrap(), vec![self.dims.hidden_dim]),
            "mlp_w2" => (self.mlp_w2.as_slice().unwrap(), vec![self.dims.hidden_dim, self.dims.model_dim]),
            "mlp_b2" => (self.mlp_b2.as_slice().unwrap(), vec![self.dims.model_dim]),
            "gamma_w" => (self.gamma_w.as_slice().unwrap(), vec![self.dims.model_dim, self.dims.model_dim]),
            "gamma_b" => (self.gamma_b.as_slice().unwrap(), vec![self.dims.model_dim]),
            "beta_w" => (self.beta_w.as_slice().unwrap(), vec![self.dims.model_dim, self.dims.model_dim]),
            "beta_b" => (self.beta_b.as_slice().unwrap(), vec![self.dims.model_dim]),
            "w_q" => (self.w_q.as_slice().unwrap(), vec![self.dims.model_dim, self.dims.model_dim]),
            "w_k" => (self.w_k.as_slice().unwrap(), vec![self.dims.model_dim, self.dims.model_dim]),
            "w_v" => (self.w_v.as_slice().unwrap(), vec![self.dims.model_dim, self.dims.model_dim]),
            _ => unreachable!("unknown tensor {name}"),
        }
    }

    fn tensor_mut(&mut self, name: &str) -> (&mut [f64], Vec<usize>) {
        let shape = self.tensor(name).1;
        let slice = match name {
            "mlp_w1" => self.mlp_w1.as_slice_mut().unwrap(),
            "mlp_b1" => self.mlp_b1.as_slice_mut().unwrap(),
            "mlp_w2" => self.mlp_w2.as_slice_mut().unwrap(),
            "mlp_b2" => self.mlp_b2.as_slice_mut().unwrap(),
            "gamma_w" => self.gamma_w.as_slice_mut().unwrap(),
            "gamma_b" => self.gamma_b.as_slice_mut().unwrap(),
            "beta_w" => self.beta_w.as_slice_mut().unwrap(),
            "beta_b" => self.beta_b.as_slice_mut().unwrap(),
            "w_q" => self.w_q.as_slice_mut().unwrap(),
            "w_k" => self.w_k.as_slice_mut().unwrap(),
            "w_v" => self.w_v.as_slice_mut().unwrap(),
            _ => unreachable!("unknown tensor {name}"),
        };
        (slice, shape)
    }

    fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let (p, h, d) = (self.dims.pe_dim, self.dims.hidden_dim, self.dims.model_dim);
        let shapes = [
            ("mlp_w1", self.mlp_w1.dim(), (p, h)),
            ("mlp_w2", self.mlp_w2.dim(), (h, d)),
            ("gamma_w", self.gamma_w.dim(), (d, d)),
            ("beta_w", self.beta_w.dim(), (d, d)),
            ("w_q", self.w_q.dim(), (d, d)),
            ("w_k", self.w_k.dim(), (d, d)),
            ("w_v", self.w_v.dim(), (d, d)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} of {want:?}"),
                    got: format!("{got:?}"),
                });
            }
        }
        let vectors = [
            ("mlp_b1", self.mlp_b1.len(), h),
            ("mlp_b2", self.mlp_b2.len(), d),
            ("gamma_b", self.gamma_b.len(), d),
            ("beta_b", self.beta_b.len(), d),
        ];
        for (name, got, want) in vectors {
            if got != want {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} of length {want}"),
                    got: format!("length {got}"),
                });
            }
        }
        let finite = TENSOR_NAMES
            .iter()
            .all(|n| self.tensor(n).0.iter().all(|v| v.is_finite()));
        if !finite || !self.ln_epsilon.is_finite() {
            return Err(Error::NonFinite("block parameters".into()));
        }
        Ok(())
    }

    /// Serializes to a JSON document of named row-major tensors with shape
    /// headers.
    pub fn to_json(&self) -> Result<String> {
        let mut tensors = BTreeMap::new();
        for name in TENSOR_NAMES {
            let (data, shape) = self.tensor(name);
            tensors.insert(
                name.to_string(),
                TensorDoc {
                    shape,
                    data: data.to_vec(),
                },
            );
        }
        let doc = FtaParamsDoc {
            pe_dim: self.dims.pe_dim,
            hidden_dim: self.dims.hidden_dim,
            model_dim: self.dims.model_dim,
            ln_epsilon: self.ln_epsilon,
            tensors,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FtaParamsDoc = serde_json::from_str(text)?;
        let dims = FtaDims {
            pe_dim: doc.pe_dim,
            hidden_dim: doc.hidden_dim,
            model_dim: doc.model_dim,
        };
        let mut params = Self::zeros(dims, doc.ln_epsilon)?;
        for name in TENSOR_NAMES {
            let tensor = doc.tensors.get(name).ok_or_else(|| {
                Error::InvalidArgument(format!("missing tensor {name:?} in parameter document"))
            })?;
            let (slice, shape) = params.tensor_mut(name);
            if tensor.shape != shape {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} of {shape:?}"),
                    got: format!("{:?}", tensor.shape),
                });
            }
            if tensor.data.len() != slice.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} with {} values", slice.len()),
                    got: format!("{} values", tensor.data.len()),
                });
            }
            slice.copy_from_slice(&tensor.data);
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FtaParamsDoc {
    pe_dim: usize,
    hidden_dim: usize,
    model_dim: usize,
    ln_epsilon: f64,
    tensors: BTreeMap<String, TensorDoc>,
}

/// Intermediate feature sequence, `(T_frames, model_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument("empty feature sequence".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        Ok(Self { data })
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn model_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Sinusoidal timestep encoding: entry `2i` is `sin(t / 10000^(2i/pe_dim))`,
/// entry `2i+1` the matching cosine.
pub fn sinusoidal_pe(t: usize, pe_dim: usize) -> Result<Array1<f64>> {
    if pe_dim == 0 || pe_dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding width must be even and positive, got {pe_dim}"
        )));
    }
    let mut pe = Array1::zeros(pe_dim);
    let t = t as f64;
    for i in 0..pe_dim / 2 {
        let exponent = 2.0 * i as f64 / pe_dim as f64;
        let angle = t / 10000f64.powf(exponent);
        pe[2 * i] = angle.sin();
        pe[2 * i + 1] = angle.cos();
    }
    Ok(pe)
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `y = x W + b` for a row vector `x`.
fn affine(x: &Array1<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut out = b.clone();
    for (i, xi) in x.iter().enumerate() {
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
    out
}

/// `(T, in) x (in, out)` row-major matrix product.
fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            let aik = a[[i, k]];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.ncols() {
                out[[i, j]] += aik * b[[k, j]];
            }
        }
    }
    out
}

/// `a^T b` with `a (T, m)` and `b (T, n)` giving `(m, n)`.
fn matmul_tn(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = Array2::zeros((a.ncols(), b.ncols()));
    for t in 0..a.nrows() {
        for i in 0..a.ncols() {
            let ati = a[[t, i]];
            if ati == 0.0 {
                continue;
            }
            for j in 0..b.ncols() {
                out[[i, j]] += ati * b[[t, j]];
            }
        }
    }
    out
}

/// `a b^T` with `a (T, m)` and `b (S, m)` giving `(T, S)`.
fn matmul_nt(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    debug_assert_eq!(a.ncols(), b.ncols());
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[[i, k]] * b[[j, k]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Per-row layer norm over the feature axis: biased variance, `eps` inside
/// the square root, no affine. Returns the normalized rows and each row's
/// `1/sqrt(var + eps)`.
fn layer_norm(x: &Array2<f64>, eps: f64) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut normed = Array2::zeros(x.dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for i in 0..x.nrows() {
        let row = x.row(i);
        let mu = row.sum() / d;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
        let s = 1.0 / (var + eps).sqrt();
        inv_std[i] = s;
        for (j, v) in row.iter().enumerate() {
            normed[[i, j]] = (v - mu) * s;
        }
    }
    (normed, inv_std)
}

struct ForwardPass {
    pe: Array1<f64>,
    h1: Array1<f64>,
    a1: Array1<f64>,
    embed: Array1<f64>,
    gamma: Array1<f64>,

    normed: Array2<f64>,
    inv_std: Array1<f64>,
    x_tilde: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    out: Array2<f64>,
}

fn check_feature_dims(params: &FtaParams, x: &FeatureSequence) -> Result<()> {
    if x.model_dim() != params.dims.model_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("feature width {}", params.dims.model_dim),
            got: format!("{}", x.model_dim()),
        });
    }
    Ok(())
}

fn forward_pass(params: &FtaParams, x: &FeatureSequence, t: usize) -> Result<ForwardPass> {
    params.validate()?;
    check_feature_dims(params, x)?;

    let pe = sinusoidal_pe(t, params.dims.pe_dim)?;
    let h1 = affine(&pe, &params.mlp_w1, &params.mlp_b1);
    let a1 = h1.mapv(silu);
    let embed = affine(&a1, &params.mlp_w2, &params.mlp_b2);
    let gamma = affine(&embed, &params.gamma_w, &params.gamma_b);
    let beta = affine(&embed, &params.beta_w, &params.beta_b);

    let (normed, inv_std) = layer_norm(x.data(), params.ln_epsilon);
    if !normed.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("layer norm output".into()));
    }
    let mut x_tilde = Array2::zeros(normed.dim());
    for i in 0..normed.nrows() {
        for j in 0..normed.ncols() {
            x_tilde[[i, j]] = normed[[i, j]] * (1.0 + gamma[j]) + beta[j];
        }
    }

    let q = matmul(&x_tilde, &params.w_q);
    let k = matmul(&x_tilde, &params.w_k);
    let v = matmul(&x_tilde, &params.w_v);

    // Scores over frames with 1/sqrt(d_k); rows stabilized by max
    // subtraction before the exponential.
    let scale = 1.0 / (params.dims.model_dim as f64).sqrt();
    let mut attn = matmul_nt(&q, &k);
    attn.mapv_inplace(|s| s * scale);
    for mut row in attn.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        for s in row.iter_mut() {
            *s /= denom;
        }
    }
    if !attn.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("attention weights".into()));
    }

    let out = x.data() + &matmul(&attn, &v);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("block output".into()));
    }

    Ok(ForwardPass {
        pe,
        h1,
        a1,
        embed,
        gamma,
        normed,
        inv_std,
        x_tilde,
        q,
        k,
        v,
        attn,
        out,
    })
}

/// Modulated layer norm: per-frame normalization over the feature axis,
/// scaled by `1 + gamma(e_t)` and shifted by `beta(e_t)`.
pub fn ada_layer_norm(
    x: &FeatureSequence,
    embed: &Array1<f64>,
    params: &FtaParams,
) -> Result<FeatureSequence> {
    params.validate()?;
    check_feature_dims(params, x)?;
    if embed.len() != params.dims.model_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("embedding of length {}", params.dims.model_dim),
            got: format!("length {}", embed.len()),
        });
    }
    let gamma = affine(embed, &params.gamma_w, &params.gamma_b);
    let beta = affine(embed, &params.beta_w, &params.beta_b);
    let (normed, _) = layer_norm(x.data(), params.ln_epsilon);
    if !normed.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("layer norm output".into()));
    }
    let mut out = Array2::zeros(normed.dim());
    for i in 0..normed.nrows() {
        for j in 0..normed.ncols() {
            out[[i, j]] = normed[[i, j]] * (1.0 + gamma[j]) + beta[j];
        }
    }
    FeatureSequence::new(out)
}

/// Timestep embedding `e_t`: two-layer MLP over the sinusoidal encoding.
pub fn timestep_embed(params: &FtaParams, t: usize) -> Result<Array1<f64>> {
    params.validate()?;
    let pe = sinusoidal_pe(t, params.dims.pe_dim)?;
    let h1 = affine(&pe, &params.mlp_w1, &params.mlp_b1);
    let a1 = h1.mapv(silu);
    Ok(affine(&a1, &params.mlp_w2, &params.mlp_b2))
}

/// Full block: modulated normalization, single-head attention over frames,
/// residual output.
pub fn fta_forward(params: &FtaParams, x: &FeatureSequence, t: usize) -> Result<FeatureSequence> {
    let pass = forward_pass(params, x, t)?;
    FeatureSequence::new(pass.out)
}

/// Attention weights the block would use at step `t`; rows sum to 1.
pub fn fta_attention_weights(
    params: &FtaParams,
    x: &FeatureSequence,
    t: usize,
) -> Result<Array2<f64>> {
    Ok(forward_pass(params, x, t)?.attn)
}

/// Gradients of `L = 0.5 * ||fta_forward(params, x, t)||^2` with respect to
/// every parameter tensor and the input features.
#[derive(Debug, Clone)]
pub struct FtaGrads {
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array1<f64>,
    pub gamma_w: Array2<f64>,
    pub gamma_b: Array1<f64>,
    pub beta_w: Array2<f64>,
    pub beta_b: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub x: Array2<f64>,
}

impl FtaGrads {
    fn tensor(&self, name: &str) -> &[f64] {
        match name {
            "mlp_w1" => self.mlp_w1.as_slice().unwrap(),
            "mlp_b1" => self.mlp_b1.as_slice().unwrap(),
            "mlp_w2" => self.mlp_w2.as_slice().unwrap(),
            "mlp_b2" => self.mlp_b2.as_slice().unwrap(),
            "gamma_w" => self.gamma_w.as_slice().unwrap(),
            "gamma_b" => self.gamma_b.as_slice().unwrap(),
            "beta_w" => self.beta_w.as_slice().unwrap(),
            "beta_b" => self.beta_b.as_slice().unwrap(),
            "w_q" => self.w_q.as_slice().unwrap(),
            "w_k" => self.w_k.as_slice().unwrap(),
            "w_v" => self.w_v.as_slice().unwrap(),
            "x" => self.x.as_slice().unwrap(),
            _ => unreachable!("unknown tensor {name}"),
        }
    }
}

/// Analytic backward pass for the squared-norm loss.
pub fn fta_gradients(params: &FtaParams, x: &FeatureSequence, t: usize) -> Result<FtaGrads> {
    let pass = forward_pass(params, x, t)?;
    let d = params.dims.model_dim;
    let frames = x.n_frames();
    let scale = 1.0 / (d as f64).sqrt();

    // dL/dY = Y; residual feeds X directly.
    let d_out = pass.out.clone();
    let mut d_x = d_out.clone();

    // Attention output O = A V.
    let d_attn_post = matmul_nt(&d_out, &pass.v); // (T, T)
    let d_v = matmul_tn(&pass.attn, &d_out); // (T, d)

    // Softmax rows: ds = a .* (da - <da, a>).
    let mut d_scores = Array2::zeros((frames, frames));
    for i in 0..frames {
        let mut dot = 0.0;
        for j in 0..frames {
            dot += d_attn_post[[i, j]] * pass.attn[[i, j]];
        }
        for j in 0..frames {
            d_scores[[i, j]] = pass.attn[[i, j]] * (d_attn_post[[i, j]] - dot);
        }
    }
    d_scores.mapv_inplace(|v| v * scale);

    let d_q = matmul(&d_scores, &pass.k);
    let d_k = matmul_tn(&d_scores, &pass.q);

    let d_w_q = matmul_tn(&pass.x_tilde, &d_q);
    let d_w_k = matmul_tn(&pass.x_tilde, &d_k);
    let d_w_v = matmul_tn(&pass.x_tilde, &d_v);

    let mut d_x_tilde = matmul_nt(&d_q, &params.w_q);
    d_x_tilde += &matmul_nt(&d_k, &params.w_k);
    d_x_tilde += &matmul_nt(&d_v, &params.w_v);

    // Modulation: x_tilde = normed * (1 + gamma) + beta, broadcast per row.
    let mut d_normed = Array2::zeros((frames, d));
    let mut d_gamma = Array1::zeros(d);
    let mut d_beta = Array1::zeros(d);
    for i in 0..frames {
        for j in 0..d {
            let g = d_x_tilde[[i, j]];
            d_normed[[i, j]] = g * (1.0 + pass.gamma[j]);
            d_gamma[j] += g * pass.normed[[i, j]];
            d_beta[j] += g;
        }
    }

    // Layer norm rows: dx = s * (dn - mean(dn) - n * mean(dn .* n)).
    let df = d as f64;
    for i in 0..frames {
        let s = pass.inv_std[i];
        let mut mean_dn = 0.0;
        let mut mean_dn_n = 0.0;
        for j in 0..d {
            mean_dn += d_normed[[i, j]];
            mean_dn_n += d_normed[[i, j]] * pass.normed[[i, j]];
        }
        mean_dn /= df;
        mean_dn_n /= df;
        for j in 0..d {
            d_x[[i, j]] +=
                s * (d_normed[[i, j]] - mean_dn - pass.normed[[i, j]] * mean_dn_n);
        }
    }

    // Modulation projections: gamma = e Wg + bg, beta = e Wb + bb.
    let mut d_gamma_w = Array2::zeros((d, d));
    let mut d_beta_w = Array2::zeros((d, d));
    let mut d_embed = Array1::zeros(d);
    for i in 0..d {
        let e = pass.embed[i];
        for j in 0..d {
            d_gamma_w[[i, j]] = e * d_gamma[j];
            d_beta_w[[i, j]] = e * d_beta[j];
            d_embed[i] += d_gamma[j] * params.gamma_w[[i, j]] + d_beta[j] * params.beta_w[[i, j]];
        }
    }

    // Timestep MLP: e = silu(pe W1 + b1) W2 + b2.
    let hidden = params.dims.hidden_dim;
    let mut d_mlp_w2 = Array2::zeros((hidden, d));
    let mut d_a1 = Array1::zeros(hidden);
    for i in 0..hidden {
        let a = pass.a1[i];
        for j in 0..d {
            d_mlp_w2[[i, j]] = a * d_embed[j];
            d_a1[i] += d_embed[j] * params.mlp_w2[[i, j]];
        }
    }
    let d_h1: Array1<f64> = Array1::from_iter(
        d_a1.iter()
            .zip(pass.h1.iter())
            .map(|(g, h): (&f64, &f64)| g * silu_prime(*h)),
    );
    let pe_dim = params.dims.pe_dim;
    let mut d_mlp_w1 = Array2::zeros((pe_dim, hidden));
    for i in 0..pe_dim {
        let p = pass.pe[i];
        for j in 0..hidden {
            d_mlp_w1[[i, j]] = p * d_h1[j];
        }
    }

    Ok(FtaGrads {
        mlp_w1: d_mlp_w1,
        mlp_b1: d_h1,
        mlp_w2: d_mlp_w2,
        mlp_b2: d_embed,
        gamma_w: d_gamma_w,
        gamma_b: d_gamma,
        beta_w: d_beta_w,
        beta_b: d_beta,
        w_q: d_w_q,
        w_k: d_w_k,
        w_v: d_w_v,
        x: d_x,
    })
}

/// `L = 0.5 * ||forward||^2` with a Neumaier-compensated reduction, so the
/// finite-difference comparison is not polluted by summation rounding at
/// the full loss magnitude.
fn loss(params: &FtaParams, x: &FeatureSequence, t: usize) -> Result<f64> {
    let pass = forward_pass(params, x, t)?;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in pass.out.iter() {
        let term = v * v;
        let next = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - next) + term;
        } else {
            comp += (term - next) + sum;
        }
        sum = next;
    }
    Ok(0.5 * (sum + comp))
}

/// Number of coordinates sampled by [`fta_grad_check`].
pub const GRAD_CHECK_COORDS: usize = 256;

/// Compares the analytic gradients against central finite differences of
/// the squared-norm loss on [`GRAD_CHECK_COORDS`] seeded random coordinates
/// spanning every parameter tensor and the input. Returns the worst
/// relative error `|g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8)`.
pub fn fta_grad_check(
    params: &FtaParams,
    x: &FeatureSequence,
    t: usize,
    h: f64,
    seed: RngSeed,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {h}"
        )));
    }
    let grads = fta_gradients(params, x, t)?;

    // Coordinate space: all parameter tensors followed by the input.
    let mut spans: Vec<(&str, usize)> = TENSOR_NAMES
        .iter()
        .map(|name| (*name, params.tensor(name).0.len()))
        .collect();
    spans.push(("x", x.data().len()));
    let total: usize = spans.iter().map(|(_, len)| *len).sum();

    let mut rng = seed.rng();
    let picks = rand::seq::index::sample(&mut rng, total, GRAD_CHECK_COORDS.min(total));

    let mut worst: f64 = 0.0;
    for flat in picks {
        let mut remaining = flat;
        let mut target = "";
        for (name, len) in &spans {
            if remaining < *len {
                target = name;
                break;
            }
            remaining -= len;
        }

        let offset = remaining;
        let eval = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            let mut features = x.clone();
            if target == "x" {
                features.data.as_slice_mut().unwrap()[offset] += delta;
            } else {
                p.tensor_mut(target).0[offset] += delta;
            }
            loss(&p, &features, t)
        };
        let plus = eval(h)?;
        let minus = eval(-h)?;
        let fd = (plus - minus) / (2.0 * h);
        let analytic = grads.tensor(target)[offset];
        let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Row-normalized timestep-by-frequency heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyHeatmap {
    pub rows: Array2<f64>,
    pub timesteps: Vec<usize>,
}

/// Builds the timestep-by-frequency heatmap of block outputs: DCT over
/// time, coefficient magnitudes averaged over feature dims, `log(1 + .)`,
/// contiguous near-equal re-binning (bin value = member mean), and row
/// normalization. An all-zero row becomes the uniform row.
pub fn frequency_heatmap(
    outputs: &[(usize, FeatureSequence)],
    n_bins: usize,
) -> Result<FrequencyHeatmap> {
    let Some((_, first)) = outputs.first() else {
        return Err(Error::InvalidArgument("no outputs to analyze".into()));
    };
    let frames = first.n_frames();
    let dims = first.model_dim();
    if n_bins == 0 || n_bins > frames {
        return Err(Error::InvalidArgument(format!(
            "bin count must be in 1..={frames}, got {n_bins}"
        )));
    }
    for (_, seq) in outputs {
        if seq.n_frames() != frames || seq.model_dim() != dims {
            return Err(Error::ShapeMismatch {
                expected: format!("{frames}x{dims}"),
                got: format!("{}x{}", seq.n_frames(), seq.model_dim()),
            });
        }
    }

    let basis = DctBasis::new(frames);
    let bins = contiguous_bins(frames, n_bins);
    let mut rows = Array2::zeros((outputs.len(), n_bins));
    let mut timesteps = Vec::with_capacity(outputs.len());
    let mut col = vec![0.0; frames];
    for (row_idx, (t, seq)) in outputs.iter().enumerate() {
        timesteps.push(*t);
        let mut magnitude = vec![0.0; frames];
        for d in 0..dims {
            for (i, c) in col.iter_mut().enumerate() {
                *c = seq.data()[[i, d]];
            }
            let coeffs = basis.forward(&col);
            for (m, c) in magnitude.iter_mut().zip(&coeffs) {
                *m += c.abs();
            }
        }
        let compressed: Vec<f64> = magnitude
            .iter()
            .map(|m| (m / dims as f64).ln_1p())
            .collect();

        let mut row_sum = 0.0;
        for (b, (start, end)) in bins.iter().enumerate() {
            let value =
                compressed[*start..*end].iter().sum::<f64>() / (end - start) as f64;
            rows[[row_idx, b]] = value;
            row_sum += value;
        }
        if row_sum == 0.0 {
            let uniform = 1.0 / n_bins as f64;
            for b in 0..n_bins {
                rows[[row_idx, b]] = uniform;
            }
        } else {
            for b in 0..n_bins {
                rows[[row_idx, b]] /= row_sum;
            }
        }
    }
    Ok(FrequencyHeatmap { rows, timesteps })
}
