//! Trace-ensemble PCA and reconstruction-quality metrics.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Result};
use crate::ramsey::Trace;
use crate::spectrum;
use crate::stats;

/// Leading components kept in a [`PcaReport`] by default.
pub const DEFAULT_REPORT_MODES: usize = 10;

/// Principal components of a mean-centered trace ensemble.
///
/// All `L` modes of the `L × L` covariance are kept, so projection followed
/// by full reconstruction is exact for any trace on the grid, not only for
/// traces in the fitted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean_trace: Vec<f64>,
    /// Orthonormal modes, ordered by decreasing variance. The entry of
    /// largest magnitude in each mode is positive.
    pub modes: Vec<Vec<f64>>,
    /// Population standard deviation of each mode's scores over the fitted
    /// ensemble.
    pub score_std: Vec<f64>,
    /// Fraction of the total variance per mode.
    pub explained_ratio: Vec<f64>,
    pub n_fit: usize,
}

impl PcaModel {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_trace.len()
    }
}

/// Fits PCA by eigendecomposition of the population covariance.
pub fn pca_fit<T: AsRef<[f64]>>(traces: &[T]) -> Result<PcaModel> {
    let n = traces.len();
    if n < 2 {
        return Err(invalid(format!("PCA needs at least 2 traces, got {n}")));
    }
    let dim = traces[0].as_ref().len();
    if dim == 0 || traces.iter().any(|t| t.as_ref().len() != dim) {
        return Err(invalid("PCA traces must share a non-empty length"));
    }

    let mut mean = vec![0.0; dim];
    for t in traces {
        for (m, v) in mean.iter_mut().zip(t.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| traces[i].as_ref()[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(degenerate("trace ensemble has zero variance"));
    }

    let mut modes = Vec::with_capacity(dim);
    let mut explained_ratio = Vec::with_capacity(dim);
    for &idx in &order {
        let mut u: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = u
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > u[best].abs() { i } else { best });
        if u[pivot] < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        modes.push(u);
        explained_ratio.push(eig.eigenvalues[idx].max(0.0) / total);
    }

    let basis = DMatrix::from_fn(dim, dim, |i, k| modes[k][i]);
    let scores = &centered * basis;
    let score_std = (0..dim)
        .map(|k| {
            let col: Vec<f64> = scores.column(k).iter().copied().collect();
            stats::population_std(&col)
        })
        .collect();

    Ok(PcaModel {
        mean_trace: mean,
        modes,
        score_std,
        explained_ratio,
        n_fit: n,
    })
}

/// Scores of `trace` on every mode.
pub fn pca_project(model: &PcaModel, trace: &[f64]) -> Result<Vec<f64>> {
    if trace.len() != model.dim() {
        return Err(invalid(format!(
            "trace has {} samples, model expects {}",
            trace.len(),
            model.dim()
        )));
    }
    Ok(model
        .modes
        .iter()
        .map(|u| {
            u.iter()
                .zip(trace.iter().zip(&model.mean_trace))
                .map(|(ui, (x, m))| ui * (x - m))
                .sum()
        })
        .collect())
}

/// `μ + Σ_{k<K} c_k u_k`.
pub fn pca_reconstruct(model: &PcaModel, scores: &[f64], k: usize) -> Result<Vec<f64>> {
    if k > model.n_modes() {
        return Err(invalid(format!("{k} modes requested, model has {}", model.n_modes())));
    }
    if scores.len() < k {
        return Err(invalid(format!("{} scores supplied for {k} modes", scores.len())));
    }
    let mut out = model.mean_trace.clone();
    for (c, u) in scores.iter().zip(&model.modes).take(k) {
        for (o, ui) in out.iter_mut().zip(u) {
            *o += c * ui;
        }
    }
    Ok(out)
}

/// `μ(t) ± σ_k u_k(t)` for the 1-based mode index `k`.
pub fn pca_mode_trace(model: &PcaModel, k: usize, sign: f64) -> Result<Vec<f64>> {
    if k == 0 || k > model.n_modes() {
        return Err(invalid(format!("mode {k} outside 1..={}", model.n_modes())));
    }
    let s = sign.signum() * model.score_std[k - 1];
    Ok(model
        .mean_trace
        .iter()
        .zip(&model.modes[k - 1])
        .map(|(m, u)| m + s * u)
        .collect())
}

/// The leading modes of a fitted model, for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub n_fit: usize,
    pub mean_trace: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
    pub score_std: Vec<f64>,
    pub explained_ratio: Vec<f64>,
}

impl PcaReport {
    pub fn leading(model: &PcaModel, k: usize) -> Self {
        let k = k.min(model.n_modes());
        Self {
            n_fit: model.n_fit,
            mean_trace: model.mean_trace.clone(),
            modes: model.modes[..k].to_vec(),
            score_std: model.score_std[..k].to_vec(),
            explained_ratio: model.explained_ratio[..k].to_vec(),
        }
    }
}

/// Convex hull of a 2-D point cloud, counter-clockwise, without collinear
/// boundary points.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Whether `p` lies inside or on a counter-clockwise convex polygon.
pub fn hull_contains(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= -1e-12
    })
}

/// Fraction of `points` inside the convex hull of `reference`.
pub fn hull_coverage(reference: &[(f64, f64)], points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let hull = convex_hull(reference);
    points.iter().filter(|p| hull_contains(&hull, **p)).count() as f64 / points.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub chi2: Option<f64>,
    pub chi2_nu: Option<f64>,
    pub fft_rmse: f64,
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn rmse_values(pred: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(pred, reference)?;
    let ms = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(ms.sqrt())
}

/// Root-mean-square pointwise deviation, PL(%).
pub fn rmse(pred: &Trace, reference: &Trace) -> Result<f64> {
    pred.check_grid(reference)?;
    rmse_values(&pred.values, &reference.values)
}

pub fn chi2_values(pred: &[f64], reference: &[f64], sigmas: &[f64], nu: f64) -> Result<(f64, f64)> {
    same_len(pred, reference)?;
    same_len(pred, sigmas)?;
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0)) {
        return Err(invalid(format!("uncertainties must be positive, found {s}")));
    }
    if !(nu > 0.0) {
        return Err(invalid(format!("degrees of freedom must be positive, got {nu}")));
    }
    let chi2: f64 = pred
        .iter()
        .zip(reference)
        .zip(sigmas)
        .map(|((p, r), s)| ((p - r) / s).powi(2))
        .sum();
    Ok((chi2, chi2 / nu))
}

/// Weighted residual sum `Σ r²/σ²` and its reduced form.
pub fn chi2(pred: &Trace, reference: &Trace, sigmas: &[f64], nu: f64) -> Result<(f64, f64)> {
    pred.check_grid(reference)?;
    chi2_values(&pred.values, &reference.values, sigmas, nu)
}

/// Mean-removed rFFT magnitude scaled to unit maximum.
pub fn normalized_fft(values: &[f64]) -> Result<Vec<f64>> {
    let mag = spectrum::centered_magnitude(values);
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(degenerate("trace is constant; its centered spectrum vanishes"));
    }
    Ok(mag.into_iter().map(|m| m / max).collect())
}

pub fn fft_rmse_values(pred: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(pred, reference)?;
    rmse_values(&normalized_fft(pred)?, &normalized_fft(reference)?)
}

/// RMSE between unit-max normalized spectra of the mean-removed traces.
pub fn fft_rmse(pred: &Trace, reference: &Trace) -> Result<f64> {
    pred.check_grid(reference)?;
    fft_rmse_values(&pred.values, &reference.values)
}

/// All metrics in one report; `chi2` is filled when uncertainties are given.
pub fn evaluate(pred: &Trace, reference: &Trace, sigmas: Option<&[f64]>, nu: Option<f64>) -> Result<MetricReport> {
    let (chi2, chi2_nu) = match sigmas {
        Some(s) => {
            let (c, cn) = chi2(pred, reference, s, nu.unwrap_or(pred.len() as f64))?;
            (Some(c), Some(cn))
        }
        None => (None, None),
    };
    Ok(MetricReport {
        rmse: rmse(pred, reference)?,
        chi2,
        chi2_nu,
        fft_rmse: fft_rmse(pred, reference)?,
    })
}
