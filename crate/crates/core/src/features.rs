//! Input normalization, token layout, and a reference attention block.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Result};
use crate::ramsey::{Trace, TRACE_LEN};
use crate::spectrum;
use crate::stats;

/// Guard added to the standard deviation in [`znorm`].
pub const ZNORM_EPS: f64 = 1e-8;

/// Variance guard in [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Number of one-sided frequency tokens for a 200-sample trace.
pub const N_FREQ: usize = TRACE_LEN / 2 + 1;

/// Default model width.
pub const D_MODEL: usize = 256;

/// Result of [`minmax_normalize_pair`]: both traces under the clean trace's
/// min–max map, and that map's endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPair {
    pub noisy: Trace,
    pub clean: Trace,
    pub min: f64,
    pub max: f64,
}

impl NormalizedPair {
    pub fn invert(&self, x: f64) -> f64 {
        self.min + x * (self.max - self.min)
    }
}

pub fn minmax_normalize_pair(noisy: &Trace, clean: &Trace) -> Result<NormalizedPair> {
    noisy.check_grid(clean)?;
    let min = clean.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = clean.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(degenerate("clean trace is constant"));
    }
    let map = |t: &Trace| Trace {
        times: t.times.clone(),
        values: t.values.iter().map(|v| (v - min) / (max - min)).collect(),
    };
    Ok(NormalizedPair {
        noisy: map(noisy),
        clean: map(clean),
        min,
        max,
    })
}

/// `(y − mean) / (std + ε)` with the population standard deviation.
pub fn znorm(y: &[f64], eps: f64) -> Vec<f64> {
    let m = stats::mean(y);
    let s = stats::population_std(y) + eps;
    y.iter().map(|v| (v - m) / s).collect()
}

/// `ln(1 + |X_k|)` over the 101 one-sided bins of a 200-sample sequence.
pub fn rfft_logmag(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != TRACE_LEN {
        return Err(invalid(format!("expected {TRACE_LEN} samples, got {}", x.len())));
    }
    Ok(spectrum::rfft_magnitude(x).into_iter().map(f64::ln_1p).collect())
}

/// Rescales `(PL %, T₂* µs, f MHz)` to `(PL/100, ln(1 + T₂*), f)`.
pub fn scale_metadata(pl: f64, t2: f64, f: f64) -> Result<[f64; 3]> {
    if !(0.0..=100.0).contains(&pl) {
        return Err(invalid(format!("PL {pl} outside [0, 100]")));
    }
    if !(t2 >= 0.0) {
        return Err(invalid(format!("T2* must be >= 0, got {t2}")));
    }
    Ok([pl / 100.0, t2.ln_1p(), f])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenType {
    Cls,
    Meta,
    Time,
    Freq,
}

impl TokenType {
    pub fn id(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub meta_values: Vec<f64>,
    pub time_tokens: Vec<f64>,
    pub freq_tokens: Vec<f64>,
    pub type_ids: Vec<TokenType>,
    pub positions: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.type_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.type_ids.is_empty()
    }

    /// Scalar value carried by each token; the CLS slot holds 0.
    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(0.0);
        v.extend(&self.meta_values);
        v.extend(&self.time_tokens);
        v.extend(&self.freq_tokens);
        v
    }

    pub fn count(&self, kind: TokenType) -> usize {
        self.type_ids.iter().filter(|t| **t == kind).count()
    }
}

/// Lays out `[cls][meta × n_meta][time × 200][freq × 101]`.
///
/// `meta` holds already-scaled scalars (see [`scale_metadata`]); the first
/// `n_meta` are used.
pub fn build_tokens(trace: &[f64], meta: &[f64], n_meta: usize) -> Result<TokenSequence> {
    if !(2..=3).contains(&n_meta) {
        return Err(invalid(format!("n_meta must be 2 or 3, got {n_meta}")));
    }
    if meta.len() < n_meta {
        return Err(invalid(format!("{} metadata values for n_meta = {n_meta}", meta.len())));
    }
    if trace.len() != TRACE_LEN {
        return Err(invalid(format!("expected {TRACE_LEN} samples, got {}", trace.len())));
    }
    let time_tokens = znorm(trace, ZNORM_EPS);
    let freq_tokens = rfft_logmag(&time_tokens)?;
    let mut type_ids = vec![TokenType::Cls];
    type_ids.extend(std::iter::repeat(TokenType::Meta).take(n_meta));
    type_ids.extend(std::iter::repeat(TokenType::Time).take(TRACE_LEN));
    type_ids.extend(std::iter::repeat(TokenType::Freq).take(N_FREQ));
    let positions = (0..type_ids.len()).collect();
    Ok(TokenSequence {
        meta_values: meta[..n_meta].to_vec(),
        time_tokens,
        freq_tokens,
        type_ids,
        positions,
    })
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 || gain.len() != x.len() || bias.len() != x.len() {
        return Err(invalid("layer norm needs D >= 2 and matching gain/bias"));
    }
    let m = stats::mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
    let s = (var + LAYER_NORM_EPS).sqrt();
    Ok(x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * (v - m) / s + b)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }
}

/// Projections for one multi-head self-attention block.
///
/// Each of `w_q`, `w_k`, `w_v`, `w_o` is `D × D`; head `h` uses columns
/// `h·d_h .. (h+1)·d_h` of the input projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub n_heads: usize,
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_o: DMatrix<f64>,
    /// When set, the output is `LN(x + attention(x))`.
    pub residual_ln: Option<LayerNormParams>,
}

impl AttentionWeights {
    pub fn new(
        n_heads: usize,
        w_q: DMatrix<f64>,
        w_k: DMatrix<f64>,
        w_v: DMatrix<f64>,
        w_o: DMatrix<f64>,
        residual_ln: Option<LayerNormParams>,
    ) -> Result<Self> {
        let w = Self { n_heads, w_q, w_k, w_v, w_o, residual_ln };
        w.validate()?;
        Ok(w)
    }

    /// Gaussian weights scaled by `1/√D`.
    pub fn random<R: Rng + ?Sized>(d_model: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        let scale = 1.0 / (d_model as f64).sqrt();
        let mut draw = || DMatrix::from_fn(d_model, d_model, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let (w_q, w_k, w_v, w_o) = (draw(), draw(), draw(), draw());
        Self::new(n_heads, w_q, w_k, w_v, w_o, None)
    }

    pub fn d_model(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w_q.nrows();
        if self.n_heads == 0 || d == 0 || d % self.n_heads != 0 {
            return Err(invalid(format!("width {d} not divisible into {} heads", self.n_heads)));
        }
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            if m.shape() != (d, d) {
                return Err(invalid(format!("projection shape {:?}, expected ({d}, {d})", m.shape())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(invalid("projection matrices must be finite"));
            }
        }
        if let Some(ln) = &self.residual_ln {
            if ln.gain.len() != d || ln.bias.len() != d {
                return Err(invalid("layer-norm parameters must have length D"));
            }
        }
        Ok(())
    }
}

/// Output of [`mha_forward_maps`]: the block output and each head's
/// attention matrix.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: DMatrix<f64>,
    pub attention: Vec<DMatrix<f64>>,
}

pub fn mha_forward(tokens: &DMatrix<f64>, weights: &AttentionWeights) -> Result<DMatrix<f64>> {
    Ok(mha_forward_maps(tokens, weights)?.output)
}

pub fn mha_forward_maps(tokens: &DMatrix<f64>, weights: &AttentionWeights) -> Result<AttentionOutput> {
    weights.validate()?;
    let (l, d) = tokens.shape();
    if l == 0 || d != weights.d_model() {
        return Err(invalid(format!("tokens are {l}×{d}, weights expect width {}", weights.d_model())));
    }
    let dh = weights.d_head();
    let q = tokens * &weights.w_q;
    let k = tokens * &weights.w_k;
    let v = tokens * &weights.w_v;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut concat = DMatrix::zeros(l, d);
    let mut maps = Vec::with_capacity(weights.n_heads);
    for h in 0..weights.n_heads {
        let cols = h * dh;
        let qh = q.columns(cols, dh);
        let kh = k.columns(cols, dh);
        let vh = v.columns(cols, dh);
        let mut a = (qh * kh.transpose()) * scale;
        for mut row in a.row_iter_mut() {
            let p = softmax(&row.iter().copied().collect::<Vec<_>>());
            for (x, pi) in row.iter_mut().zip(p) {
                *x = pi;
            }
        }
        concat.columns_mut(cols, dh).copy_from(&(&a * vh));
        maps.push(a);
    }
    let mut out = concat * &weights.w_o;

    if let Some(ln) = &weights.residual_ln {
        out += tokens;
        for i in 0..l {
            let row: Vec<f64> = out.row(i).iter().copied().collect();
            let normed = DVector::from_vec(layer_norm(&row, &ln.gain, &ln.bias)?);
            out.row_mut(i).copy_from(&normed.transpose());
        }
    }
    Ok(AttentionOutput { output: out, attention: maps })
}
