//! Two-component experimental noise model.
//!
//! A noisy trace is `y + δ·1 + ε`, where `δ ~ N(0, σ_dc²)` is drawn once per
//! trace (slow baseline drift) and `ε_k ~ N(0, σ(y_k)²)` independently per
//! point, with `σ(y) = b₀ + b₁y + b₂y²` clipped from below at a positive floor.
//!
//! Calibration runs the other way: residuals of single sweeps against a
//! high-SNR reference give `σ_dc` from the spread of the per-sweep means and
//! `σ(y)` from binned, drift-removed residual spreads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ramsey::Trace;
use crate::stats;

/// Minimum number of sweeps accepted by [`fit_dc`].
pub const MIN_DC_SWEEPS: usize = 30;

/// Minimum residual pairs per bin accepted by [`fit_sigma`].
pub const MIN_PAIRS_PER_BIN: usize = 10;

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    /// Standard deviation of the per-trace baseline offset, PL units.
    pub sigma_dc: f64,
    /// Lower clip for `σ(y)`, PL units.
    pub sigma_floor: f64,
}

impl Default for NoiseModel {
    /// Coefficients calibrated on the experimental NV ensemble.
    fn default() -> Self {
        Self {
            b0: -147.9,
            b1: 3.481,
            b2: -0.01975,
            sigma_dc: 3.928,
            sigma_floor: 0.1,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_floor > 0.0) {
            return Err(invalid(format!(
                "sigma_floor must be positive, got {}",
                self.sigma_floor
            )));
        }
        if !(self.sigma_dc >= 0.0) {
            return Err(invalid(format!("sigma_dc must be non-negative, got {}", self.sigma_dc)));
        }
        if ![self.b0, self.b1, self.b2].iter().all(|b| b.is_finite()) {
            return Err(invalid("noise coefficients must be finite"));
        }
        Ok(())
    }

    /// Unclipped quadratic.
    pub fn raw_sigma(&self, y: f64) -> f64 {
        self.b0 + self.b1 * y + self.b2 * y * y
    }

    /// Pointwise noise scale at PL level `y`.
    pub fn sigma_of_y(&self, y: f64) -> f64 {
        self.raw_sigma(y).max(self.sigma_floor)
    }
}

/// Pointwise residuals of single sweeps against a reference trace.
///
/// `pairs` is sweep-major: entries `[s·points_per_sweep, (s+1)·points_per_sweep)`
/// belong to sweep `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub points_per_sweep: usize,
    /// `(reference level y_k, residual r_k)`.
    pub pairs: Vec<(f64, f64)>,
    pub per_sweep_means: Vec<f64>,
}

impl ResidualSet {
    pub fn n_sweeps(&self) -> usize {
        self.per_sweep_means.len()
    }

    fn check(&self) -> Result<()> {
        if self.points_per_sweep == 0
            || self.pairs.len() != self.points_per_sweep * self.per_sweep_means.len()
        {
            return Err(invalid(format!(
                "{} pairs do not split into {} sweeps of {} points",
                self.pairs.len(),
                self.per_sweep_means.len(),
                self.points_per_sweep
            )));
        }
        Ok(())
    }
}

/// `r⁽ˢ⁾(t_k) = PL⁽ˢ⁾(t_k) − PL_ref(t_k)` for every sweep, plus per-sweep means.
pub fn compute_residuals(sweeps: &[Trace], reference: &Trace) -> Result<ResidualSet> {
    let n = reference.len();
    let mut pairs = Vec::with_capacity(sweeps.len() * n);
    let mut per_sweep_means = Vec::with_capacity(sweeps.len());
    for sweep in sweeps {
        sweep.check_grid(reference)?;
        let mut sum = 0.0;
        for (y, v) in reference.values.iter().zip(&sweep.values) {
            let r = v - y;
            sum += r;
            pairs.push((*y, r));
        }
        per_sweep_means.push(sum / n as f64);
    }
    Ok(ResidualSet {
        points_per_sweep: n,
        pairs,
        per_sweep_means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaBin {
    /// Mean reference level of the bin.
    pub y_center: f64,
    /// Sample standard deviation of the drift-removed residuals.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFit {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub bins: Vec<SigmaBin>,
}

impl SigmaFit {
    pub fn eval(&self, y: f64) -> f64 {
        self.b0 + self.b1 * y + self.b2 * y * y
    }
}

/// Fits the quadratic `σ(y)` to equal-count bins of drift-removed residuals.
///
/// Each residual has its sweep mean subtracted first, so the baseline-drift
/// component does not inflate the pointwise spread.
pub fn fit_sigma(res: &ResidualSet, n_bins: usize) -> Result<SigmaFit> {
    res.check()?;
    if n_bins < 3 {
        return Err(Error::Fit(format!("a quadratic needs at least 3 bins, got {n_bins}")));
    }
    let total = res.pairs.len();
    if total < n_bins * MIN_PAIRS_PER_BIN {
        return Err(Error::Fit(format!(
            "{total} residuals are too few for {n_bins} bins (need {})",
            n_bins * MIN_PAIRS_PER_BIN
        )));
    }

    let mut entries: Vec<(f64, f64)> = res
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &(y, r))| (y, r - res.per_sweep_means[i / res.points_per_sweep]))
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));

    let bins: Vec<SigmaBin> = (0..n_bins)
        .map(|b| {
            let chunk = &entries[b * total / n_bins..(b + 1) * total / n_bins];
            let ys: Vec<f64> = chunk.iter().map(|e| e.0).collect();
            let rs: Vec<f64> = chunk.iter().map(|e| e.1).collect();
            SigmaBin {
                y_center: stats::mean(&ys),
                std: stats::sample_std(&rs),
                count: chunk.len(),
            }
        })
        .collect();

    let [b0, b1, b2] = quadratic_least_squares(
        &bins.iter().map(|b| b.y_center).collect::<Vec<_>>(),
        &bins.iter().map(|b| b.std).collect::<Vec<_>>(),
    )?;
    Ok(SigmaFit { b0, b1, b2, bins })
}

/// Least-squares `v ≈ b0 + b1 x + b2 x²`, solved in standardized coordinates.
/// When the abscissae do not vary the fit degrades to a constant.
fn quadratic_least_squares(x: &[f64], v: &[f64]) -> Result<[f64; 3]> {
    let m = stats::mean(x);
    let s = match stats::population_std(x) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let design = DMatrix::from_fn(x.len(), 3, |i, j| ((x[i] - m) / s).powi(j as i32));
    let rhs = DVector::from_column_slice(v);
    let c = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let (c0, c1, c2) = (c[0], c[1], c[2]);
    Ok([
        c0 - c1 * m / s + c2 * m * m / (s * s),
        c1 / s - 2.0 * c2 * m / (s * s),
        c2 / (s * s),
    ])
}

/// `σ_dc` as the sample standard deviation of the per-sweep residual means.
pub fn fit_dc(res: &ResidualSet) -> Result<f64> {
    fit_dc_min(res, MIN_DC_SWEEPS)
}

/// [`fit_dc`] with an explicit minimum sweep count (at least 2).
pub fn fit_dc_min(res: &ResidualSet, min_sweeps: usize) -> Result<f64> {
    let need = min_sweeps.max(2);
    if res.n_sweeps() < need {
        return Err(Error::Fit(format!(
            "drift fit needs at least {need} sweeps, got {}",
            res.n_sweeps()
        )));
    }
    Ok(stats::sample_std(&res.per_sweep_means))
}

/// Full calibration: quadratic `σ(y)` plus `σ_dc`.
pub fn calibrate(res: &ResidualSet, n_bins: usize, sigma_floor: f64) -> Result<NoiseModel> {
    let fit = fit_sigma(res, n_bins)?;
    let model = NoiseModel {
        b0: fit.b0,
        b1: fit.b1,
        b2: fit.b2,
        sigma_dc: fit_dc(res)?,
        sigma_floor,
    };
    model.validate()?;
    Ok(model)
}

/// Draws one noisy realization of `clean`.
///
/// The baseline offset is drawn first, then one fluctuation per point in
/// grid order.
pub fn synthesize<R: Rng + ?Sized>(clean: &Trace, model: &NoiseModel, rng: &mut R) -> Trace {
    let mut out = clean.clone();
    synthesize_in_place(&mut out.values, model, rng);
    out
}

pub(crate) fn synthesize_in_place<R: Rng + ?Sized>(values: &mut [f64], model: &NoiseModel, rng: &mut R) {
    let delta = model.sigma_dc * rng.sample::<f64, _>(StandardNormal);
    for v in values.iter_mut() {
        let eps = model.sigma_of_y(*v) * rng.sample::<f64, _>(StandardNormal);
        *v += delta + eps;
    }
}
