//! Scalar training objectives, evaluated in closed form.
//!
//! Nothing here differentiates or optimizes; these are the reference values an
//! external training stack should agree with.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectrum;
use crate::stats;

/// Number of count classes (0 through 10 spins).
pub const N_CLASSES: usize = 11;

/// Regression slots for coupling targets.
pub const N_SLOTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    /// Periodic Hann taper, `0.5 − 0.5 cos(2πn/N)`.
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 32,
            hop: 8,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len || self.window_len > 200 {
            return Err(invalid(format!(
                "need 0 < hop <= window_len <= 200, got hop {} window {}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_stft: f64,
    pub w_count: f64,
    pub w_cij: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_stft: 0.5,
            w_count: 1.0,
            w_cij: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_stft, self.w_count, self.w_cij, self.beta];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Short-time spectra: one row of `window_len / 2 + 1` bins per frame.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Vec<Vec<Complex64>>> {
    cfg.validate()?;
    if x.len() < cfg.window_len {
        return Err(invalid(format!(
            "sequence of {} samples is shorter than the {}-sample window",
            x.len(),
            cfg.window_len
        )));
    }
    let taper = cfg.window.coefficients(cfg.window_len);
    let mut frame = vec![0.0; cfg.window_len];
    Ok((0..cfg.n_frames(x.len()))
        .map(|f| {
            let start = f * cfg.hop;
            for (i, slot) in frame.iter_mut().enumerate() {
                *slot = x[start + i] * taper[i];
            }
            spectrum::rfft(&frame)
        })
        .collect())
}

/// Squared error plus the weighted ℓ₁ distance between short-time spectra of
/// the mean-removed sequences.
pub fn core_loss(pred: &[f64], target: &[f64], cfg: &StftConfig, weights: &LossWeights) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", pred.len(), target.len())));
    }
    let sq: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    if weights.lambda_stft == 0.0 {
        return Ok(sq);
    }
    let center = |x: &[f64]| {
        let m = stats::mean(x);
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let sp = stft(&center(pred), cfg)?;
    let st = stft(&center(target), cfg)?;
    let l1: f64 = sp
        .iter()
        .flatten()
        .zip(st.iter().flatten())
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(sq + weights.lambda_stft * l1)
}

/// `(ln(1 + pred) − ln(1 + true))²` for dephasing times in µs.
pub fn logspace_mse(pred_t2: f64, true_t2: f64) -> Result<f64> {
    if !(pred_t2 >= 0.0) || !(true_t2 >= 0.0) {
        return Err(invalid(format!("T2* values must be >= 0, got {pred_t2}, {true_t2}")));
    }
    Ok((pred_t2.ln_1p() - true_t2.ln_1p()).powi(2))
}

/// Huber-style loss, quadratic inside `|r| < beta`.
pub fn smooth_l1(r: f64, beta: f64) -> f64 {
    if r.abs() < beta {
        r * r / (2.0 * beta)
    } else {
        r.abs() - beta / 2.0
    }
}

/// Derivative of [`smooth_l1`] with respect to `r`.
pub fn smooth_l1_grad(r: f64, beta: f64) -> f64 {
    if r.abs() < beta {
        r / beta
    } else {
        r.signum()
    }
}

/// `−log softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(invalid(format!("label {label} outside 0..{}", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("logits must be finite"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Mean cross-entropy over a batch.
pub fn cross_entropy_batch(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(invalid("batch needs equal, non-zero numbers of logits and labels"));
    }
    let mut total = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        total += cross_entropy(l, y)?;
    }
    Ok(total / logits.len() as f64)
}

/// Mean [`smooth_l1`] over the first `n` slots.
pub fn masked_smooth_l1(pred: &[f64], target: &[f64], n: usize, beta: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("masked loss needs at least one active slot"));
    }
    if n > pred.len() || n > target.len() {
        return Err(invalid(format!("{n} active slots but vectors of {} and {}", pred.len(), target.len())));
    }
    let sum: f64 = pred[..n]
        .iter()
        .zip(&target[..n])
        .map(|(p, t)| smooth_l1(p - t, beta))
        .sum();
    Ok(sum / n as f64)
}

pub fn total_hf_loss(ce: f64, cij: f64, weights: &LossWeights) -> f64 {
    weights.w_count * ce + weights.w_cij * cij
}
