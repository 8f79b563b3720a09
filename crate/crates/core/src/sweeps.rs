//! K-sweep averaging of photon-count records.
//!
//! Each laboratory sweep stores signal-window and normalization-window counts
//! on the full time grid. A `K`-sweep trace is the ratio of the per-point
//! sample means over a subset of sweeps, with a first-order (delta-method)
//! uncertainty that includes the signal/normalization covariance.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Result};

/// Subset sizes used by the standard resampling sweep.
pub const STANDARD_K: [usize; 9] = [5, 10, 15, 25, 30, 35, 40, 45, 50];

/// Default cap on resampled realizations per `K`.
pub const DEFAULT_N_REP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep_id: u32,
    /// Signal-window counts per grid point.
    pub s_counts: Vec<f64>,
    /// Normalization-window counts per grid point.
    pub n_counts: Vec<f64>,
    /// Stored per-sweep PL channel, when the acquisition kept one. Carried
    /// through for bookkeeping only.
    pub pl: Option<Vec<f64>>,
}

impl SweepRecord {
    pub fn new(sweep_id: u32, s_counts: Vec<f64>, n_counts: Vec<f64>) -> Result<Self> {
        let rec = Self {
            sweep_id,
            s_counts,
            n_counts,
            pl: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn len(&self) -> usize {
        self.s_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_counts.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_counts.len() != self.n_counts.len() {
            return Err(invalid(format!(
                "sweep {}: {} signal vs {} normalization points",
                self.sweep_id,
                self.s_counts.len(),
                self.n_counts.len()
            )));
        }
        if let Some(pl) = &self.pl {
            if pl.len() != self.s_counts.len() {
                return Err(invalid(format!("sweep {}: PL channel length mismatch", self.sweep_id)));
            }
        }
        if self
            .s_counts
            .iter()
            .chain(&self.n_counts)
            .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return Err(invalid(format!("sweep {}: counts must be finite and >= 0", self.sweep_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampledTrace {
    /// `100 · μ_S / μ_N` per point, PL(%).
    pub pl: Vec<f64>,
    /// Delta-method standard uncertainty per point, PL(%).
    pub u_pl: Vec<f64>,
    pub k: usize,
    /// Sweep ids of the subset, ascending.
    pub indices: Vec<u32>,
    /// Sum of the stored per-sweep PL channels, when every sweep had one.
    pub pl_sum: Option<Vec<f64>>,
}

/// Per-point first and second moments of the two channels over a subset.
struct ChannelMoments {
    k: usize,
    mean_s: Vec<f64>,
    mean_n: Vec<f64>,
    /// Sample variance of the linearized ratio residual `S − R·N`.
    var_lin: Vec<f64>,
}

fn check_subset(records: &[&SweepRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| invalid("sweep subset is empty"))?;
    let len = first.len();
    for r in records {
        r.validate()?;
        if r.len() != len {
            return Err(invalid("sweeps in a subset must share the grid"));
        }
    }
    Ok(len)
}

fn moments(records: &[&SweepRecord], with_spread: bool) -> Result<ChannelMoments> {
    let len = check_subset(records)?;
    let k = records.len();
    let kf = k as f64;
    let mut mean_s = vec![0.0; len];
    let mut mean_n = vec![0.0; len];
    for r in records {
        for j in 0..len {
            mean_s[j] += r.s_counts[j];
            mean_n[j] += r.n_counts[j];
        }
    }
    mean_s.iter_mut().for_each(|m| *m /= kf);
    mean_n.iter_mut().for_each(|m| *m /= kf);

    // Σ (S − R·N)² about its mean with R = μ_S/μ_N equals
    // σ_S² − 2R·cov + R²σ_N² but cannot cancel below zero.
    let mut var_lin = vec![0.0; len];
    if with_spread && k >= 2 {
        for r in records {
            for j in 0..len {
                if mean_n[j] == 0.0 {
                    continue;
                }
                let ratio = mean_s[j] / mean_n[j];
                let d = (r.s_counts[j] - mean_s[j]) - ratio * (r.n_counts[j] - mean_n[j]);
                var_lin[j] += d * d;
            }
        }
        let denom = (k - 1) as f64;
        var_lin.iter_mut().for_each(|v| *v /= denom);
    }
    Ok(ChannelMoments {
        k,
        mean_s,
        mean_n,
        var_lin,
    })
}

fn ratio_from(m: &ChannelMoments) -> Result<Vec<f64>> {
    m.mean_s
        .iter()
        .zip(&m.mean_n)
        .enumerate()
        .map(|(j, (s, n))| {
            if *n == 0.0 {
                Err(degenerate(format!("mean normalization count is zero at point {j}")))
            } else {
                Ok(100.0 * s / n)
            }
        })
        .collect()
}

fn uncertainty_from(m: &ChannelMoments) -> Result<Vec<f64>> {
    let kf = m.k as f64;
    (0..m.mean_s.len())
        .map(|j| {
            let mn = m.mean_n[j];
            if mn == 0.0 {
                return Err(degenerate(format!("mean normalization count is zero at point {j}")));
            }
            let var = m.var_lin[j] / (mn * mn * kf);
            Ok(100.0 * var.max(0.0).sqrt())
        })
        .collect()
}

/// Ratio of means `100 · μ_S(j) / μ_N(j)` over the subset.
pub fn pl_ratio(records: &[&SweepRecord]) -> Result<Vec<f64>> {
    ratio_from(&moments(records, false)?)
}

/// Delta-method standard uncertainty of [`pl_ratio`], clamped at zero.
pub fn propagate_uncertainty(records: &[&SweepRecord]) -> Result<Vec<f64>> {
    if records.len() < 2 {
        return Err(invalid(format!(
            "uncertainty propagation needs K >= 2, got {}",
            records.len()
        )));
    }
    uncertainty_from(&moments(records, true)?)
}

/// Averaged trace and uncertainty for the records at `indices`.
pub fn resampled_trace(records: &[SweepRecord], indices: &[usize]) -> Result<ResampledTrace> {
    let subset: Vec<&SweepRecord> = indices
        .iter()
        .map(|&i| {
            records
                .get(i)
                .ok_or_else(|| invalid(format!("index {i} out of range for {} records", records.len())))
        })
        .collect::<Result<_>>()?;
    if subset.len() < 2 {
        return Err(invalid("a resampled trace needs K >= 2"));
    }
    let m = moments(&subset, true)?;
    let pl = ratio_from(&m)?;
    let u_pl = uncertainty_from(&m)?;
    let pl_sum = if subset.iter().all(|r| r.pl.is_some()) {
        let mut acc = vec![0.0; pl.len()];
        for r in &subset {
            for (a, v) in acc.iter_mut().zip(r.pl.as_ref().into_iter().flatten()) {
                *a += v;
            }
        }
        Some(acc)
    } else {
        None
    };
    let mut ids: Vec<u32> = subset.iter().map(|r| r.sweep_id).collect();
    ids.sort_unstable();
    Ok(ResampledTrace {
        pl,
        u_pl,
        k: subset.len(),
        indices: ids,
        pl_sum,
    })
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn all_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // rightmost slot that can still advance
        match (0..k).rev().find(|&i| idx[i] < n - k + i) {
            None => return out,
            Some(i) => {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
    }
}

/// Draws up to `n_rep` distinct size-`k` subsets of `0..n`, each sorted.
///
/// When fewer than `n_rep` subsets exist they are all returned in
/// lexicographic order. Otherwise candidate `a` is drawn from the ChaCha8
/// stream `(seed, a)` and kept if it has not been seen before.
pub fn resample_indices(n: usize, k: usize, n_rep: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(invalid("subset size must be at least 1"));
    }
    if k > n {
        return Err(invalid(format!("subset size {k} exceeds {n} records")));
    }
    if binomial(n, k) <= n_rep as u128 {
        return Ok(all_subsets(n, k));
    }
    let mut seen = HashSet::with_capacity(n_rep);
    let mut out = Vec::with_capacity(n_rep);
    let mut attempt: u64 = 0;
    while out.len() < n_rep {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        attempt += 1;
        let mut subset = rand::seq::index::sample(&mut rng, n, k).into_vec();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            out.push(subset);
        }
    }
    Ok(out)
}

/// [`resample_indices`] over a record list.
pub fn resample(records: &[SweepRecord], k: usize, n_rep: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    resample_indices(records.len(), k, n_rep, seed)
}
