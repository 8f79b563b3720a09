//! Real-input DFT helpers built on `rustfft`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<HashMap<usize, Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(len)
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(len))
            .clone()
    })
}

/// One-sided DFT of a real sequence: `len / 2 + 1` bins, unnormalized.
pub fn rfft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Magnitudes of [`rfft`].
pub fn rfft_magnitude(x: &[f64]) -> Vec<f64> {
    rfft(x).iter().map(|c| c.norm()).collect()
}

/// Magnitude spectrum of the mean-removed sequence.
pub fn centered_magnitude(x: &[f64]) -> Vec<f64> {
    let m = crate::stats::mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    rfft_magnitude(&centered)
}

/// Frequency of rFFT bin `k` for samples spaced `dt` apart over `n` points.
pub fn bin_frequency(k: usize, n: usize, dt: f64) -> f64 {
    k as f64 / (n as f64 * dt)
}
