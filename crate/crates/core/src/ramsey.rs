//! Reduced rotating-frame Ramsey simulation.
//!
//! For one quasi-static nuclear configuration the electron sees a detuning
//!
//! ```text
//! Δ = f_base + A_N·m_N + Σᵢ A_i·m_i        (MHz; couplings converted from kHz)
//! ```
//!
//! and the `m_s = 0` population after `π/2 – τ – π/2` is
//! `½[1 + exp(−(τ/T₂*)²)·cos(2πΔτ)]`. The ensemble signal averages this over
//! all `m_N ∈ {−1, 0, +1}` and `m_i ∈ {−½, +½}` with equal weight, and a
//! linear readout maps it to PL(%).
//!
//! Because the projections are independent and uniformly weighted, the
//! average of the cosine factorizes:
//!
//! ```text
//! ⟨cos 2πΔτ⟩ = cos(2π f_base τ) · Πᵢ cos(π A_i τ) · (1 + 2 cos(2π A_N τ)) / 3
//! ```
//!
//! which is what [`ensemble_signal`] evaluates; cost is linear in the number
//! of spins rather than exponential.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest ¹³C count a [`HyperfineSet`] may carry.
pub const MAX_C13: usize = 9;

/// Default number of samples per trace.
pub const TRACE_LEN: usize = 200;

/// Evolution-time grid, µs. Points are evenly spaced with both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub n_points: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n_points: TRACE_LEN,
            t_start: 0.0,
            t_end: 2.0,
        }
    }
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(invalid(format!("grid needs at least 2 points, got {}", self.n_points)));
        }
        if !(self.t_start >= 0.0 && self.t_end > self.t_start && self.t_end.is_finite()) {
            return Err(invalid(format!(
                "grid requires t_end > t_start >= 0, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / (self.n_points - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.n_points)
            .map(|i| self.t_start + dt * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RamseyConfig {
    pub grid: Grid,
    /// Offset detuning, MHz.
    pub f_base: f64,
    /// Gaussian dephasing time, µs.
    pub t2_star: f64,
    /// ¹⁴N parallel coupling, kHz. Only used when `include_n14` is set.
    pub a_par_n14: f64,
    pub include_n14: bool,
    /// PL(%) of the `m_s = 0` level.
    pub pl_high: f64,
    /// PL(%) of the `m_s = −1` readout level.
    pub pl_low: f64,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            f_base: 5.0,
            t2_star: 1.0,
            a_par_n14: 0.0,
            include_n14: false,
            pl_high: 100.0,
            pl_low: 80.0,
        }
    }
}

impl RamseyConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.t2_star > 0.0) {
            return Err(invalid(format!("t2_star must be positive, got {}", self.t2_star)));
        }
        if !self.f_base.is_finite() || !self.a_par_n14.is_finite() {
            return Err(invalid("detuning parameters must be finite"));
        }
        if !(75.0..=90.0).contains(&self.pl_low) {
            return Err(invalid(format!("pl_low must lie in [75, 90], got {}", self.pl_low)));
        }
        if !(self.pl_high > self.pl_low) {
            return Err(invalid(format!(
                "pl_high ({}) must exceed pl_low ({})",
                self.pl_high, self.pl_low
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }
}

/// Parallel ¹³C couplings (kHz) entering the detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperfineSet {
    couplings: Vec<f64>,
}

impl HyperfineSet {
    pub fn new(couplings: Vec<f64>) -> Result<Self> {
        if couplings.len() > MAX_C13 {
            return Err(invalid(format!(
                "at most {MAX_C13} couplings are supported, got {}",
                couplings.len()
            )));
        }
        if couplings.iter().any(|c| !c.is_finite()) {
            return Err(invalid("couplings must be finite"));
        }
        Ok(Self { couplings })
    }

    pub fn empty() -> Self {
        Self { couplings: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.couplings.len()
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }
}

/// One quasi-static assignment of nuclear projections.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionState {
    /// ¹⁴N projection, one of −1, 0, +1.
    pub m_n14: i8,
    /// ¹³C projections, each ±½.
    pub m_c13: Vec<f64>,
}

/// A PL(%) trace sampled on an evolution-time grid (µs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(invalid(format!(
                "trace has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("trace times must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether `other` is sampled on the same time grid.
    pub fn same_grid(&self, other: &Trace) -> bool {
        self.times.len() == other.times.len()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
    }

    pub(crate) fn check_grid(&self, other: &Trace) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(invalid("traces are not sampled on the same grid"))
        }
    }
}

/// Detuning in MHz for one projection assignment.
pub fn detuning_mhz(cfg: &RamseyConfig, hf: &HyperfineSet, proj: &ProjectionState) -> Result<f64> {
    if proj.m_c13.len() != hf.n() {
        return Err(invalid(format!(
            "projection covers {} spins but the set has {}",
            proj.m_c13.len(),
            hf.n()
        )));
    }
    if !(-1..=1).contains(&proj.m_n14) {
        return Err(invalid(format!("m_N must be -1, 0 or +1, got {}", proj.m_n14)));
    }
    if proj.m_c13.iter().any(|m| (m.abs() - 0.5).abs() > 1e-12) {
        return Err(invalid("13C projections must be +-1/2"));
    }
    let mut delta = cfg.f_base;
    if cfg.include_n14 {
        delta += cfg.a_par_n14 / 1000.0 * proj.m_n14 as f64;
    }
    for (a, m) in hf.couplings().iter().zip(&proj.m_c13) {
        delta += a / 1000.0 * m;
    }
    Ok(delta)
}

/// `m_s = 0` population after free evolution `tau` (µs) at detuning `delta`
/// (MHz). The Gaussian envelope damps only the oscillating term.
pub fn fringe(tau: f64, delta: f64, t2_star: f64) -> f64 {
    let env = (-(tau / t2_star).powi(2)).exp();
    0.5 * (1.0 + env * (2.0 * PI * delta * tau).cos())
}

/// Number of projection branches averaged by [`ensemble_signal`].
pub fn branch_count(cfg: &RamseyConfig, hf: &HyperfineSet) -> usize {
    let n14 = if cfg.include_n14 { 3 } else { 1 };
    n14 << hf.n()
}

/// Projection-averaged `m_s = 0` population on the configured grid.
pub fn ensemble_signal(cfg: &RamseyConfig, hf: &HyperfineSet) -> Result<Vec<f64>> {
    if hf.n() > MAX_C13 {
        return Err(Error::Resource(format!(
            "{} spins exceed the {MAX_C13}-spin limit",
            hf.n()
        )));
    }
    if !(cfg.t2_star > 0.0) {
        return Err(invalid("t2_star must be positive"));
    }
    cfg.grid.validate()?;
    let khz_to_mhz = 1e-3;
    let signal = cfg
        .times()
        .into_iter()
        .map(|tau| {
            let mut avg = (2.0 * PI * cfg.f_base * tau).cos();
            for a in hf.couplings() {
                avg *= (PI * a * khz_to_mhz * tau).cos();
            }
            if cfg.include_n14 {
                avg *= (1.0 + 2.0 * (2.0 * PI * cfg.a_par_n14 * khz_to_mhz * tau).cos()) / 3.0;
            }
            let env = (-(tau / cfg.t2_star).powi(2)).exp();
            0.5 * (1.0 + env * avg)
        })
        .collect();
    Ok(signal)
}

/// Linear readout: `pl_low + (pl_high − pl_low)·P₀`.
pub fn to_pl(signal: &[f64], cfg: &RamseyConfig) -> Result<Trace> {
    let times = cfg.times();
    if signal.len() != times.len() {
        return Err(invalid(format!(
            "signal has {} samples, grid has {}",
            signal.len(),
            times.len()
        )));
    }
    let span = cfg.pl_high - cfg.pl_low;
    let values = signal.iter().map(|p| cfg.pl_low + span * p).collect();
    Trace::new(times, values)
}

/// Regenerates the PL trace implied by a set of hyperfine parameters.
pub fn forward_reconstruct(hf: &HyperfineSet, cfg: &RamseyConfig) -> Result<Trace> {
    cfg.validate()?;
    to_pl(&ensemble_signal(cfg, hf)?, cfg)
}
