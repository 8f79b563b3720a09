use nvramsey::stats;
use nvramsey::sweeps::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn poisson_sweep(id: u32, len: usize, rng: &mut ChaCha8Rng) -> SweepRecord {
    let s = Poisson::new(300.0).unwrap();
    let n = Poisson::new(1000.0).unwrap();
    SweepRecord::new(
        id,
        (0..len).map(|_| s.sample(rng)).collect(),
        (0..len).map(|_| n.sample(rng)).collect(),
    )
    .unwrap()
}

/// Second-moment formula written out directly.
fn delta_oracle(recs: &[&SweepRecord], j: usize) -> f64 {
    let s: Vec<f64> = recs.iter().map(|r| r.s_counts[j]).collect();
    let n: Vec<f64> = recs.iter().map(|r| r.n_counts[j]).collect();
    let k = s.len() as f64;
    let (ms, mn) = (stats::mean(&s), stats::mean(&n));
    let cov = s.iter().zip(&n).map(|(a, b)| (a - ms) * (b - mn)).sum::<f64>() / (k - 1.0);
    let var = (stats::sample_variance(&s) / (mn * mn) + ms * ms * stats::sample_variance(&n) / mn.powi(4)
        - 2.0 * ms * cov / mn.powi(3))
        / k;
    100.0 * var.max(0.0).sqrt()
}

#[test]
fn matches_written_out_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let recs: Vec<SweepRecord> = (0..12).map(|i| poisson_sweep(i, 8, &mut rng)).collect();
    let refs: Vec<&SweepRecord> = recs.iter().collect();
    let u = propagate_uncertainty(&refs).unwrap();
    for (j, uj) in u.iter().enumerate() {
        assert!((uj - delta_oracle(&refs, j)).abs() < 1e-10 * uj.max(1.0));
    }
}

#[test]
fn delta_method_tracks_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in [25usize, 50] {
        let reps = 3000;
        let mut ratios = Vec::with_capacity(reps);
        let mut deltas = Vec::with_capacity(reps);
        for _ in 0..reps {
            let recs: Vec<SweepRecord> = (0..k as u32).map(|i| poisson_sweep(i, 1, &mut rng)).collect();
            let refs: Vec<&SweepRecord> = recs.iter().collect();
            ratios.push(pl_ratio(&refs).unwrap()[0]);
            deltas.push(propagate_uncertainty(&refs).unwrap()[0]);
        }
        let mc = stats::sample_std(&ratios);
        let dm = stats::mean(&deltas);
        assert!((dm / mc - 1.0).abs() < 0.1, "K={k}: delta {dm} vs MC {mc}");
    }
}

#[test]
fn subset_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let recs: Vec<SweepRecord> = (0..5).map(|i| poisson_sweep(i, 4, &mut rng)).collect();
    let sets = resample(&recs, 2, 10_000, 1).unwrap();
    assert_eq!(sets.len(), 10);
    assert_eq!(resample(&recs, 5, 10, 1).unwrap().len(), 1);
    assert!(resample(&recs, 6, 10, 1).is_err());
}

#[test]
fn sampled_subsets_are_unique_and_reproducible() {
    let a = resample_indices(50, 25, 2000, 77).unwrap();
    let b = resample_indices(50, 25, 2000, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2000);
    let mut uniq = a.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), a.len());
    assert!(a.iter().all(|s| s.len() == 25 && s.windows(2).all(|w| w[0] < w[1]) && s[24] < 50));
    assert_ne!(a, resample_indices(50, 25, 2000, 78).unwrap());
}

proptest! {
    #[test]
    fn uncertainty_is_never_negative(
        counts in prop::collection::vec((0.0..2000.0f64, 1.0..2000.0f64), 2..8),
        c in prop::option::of(0.01..3.0f64),
    ) {
        let recs: Vec<SweepRecord> = counts
            .iter()
            .enumerate()
            .map(|(i, (s, n))| SweepRecord::new(i as u32, vec![c.map_or(*s, |c| c * n)], vec![*n]).unwrap())
            .collect();
        let refs: Vec<&SweepRecord> = recs.iter().collect();
        let u = propagate_uncertainty(&refs).unwrap();
        prop_assert!(u[0] >= 0.0 && u[0].is_finite());
        if c.is_some() {
            prop_assert!(u[0] < 1e-12);
        }
    }

    #[test]
    fn ratio_invariant_to_power_of_two_scaling(
        counts in prop::collection::vec((0.0..2000.0f64, 1.0..2000.0f64), 1..6),
        e in -8i32..8,
    ) {
        let c = 2f64.powi(e);
        let mk = |scale: f64| -> Vec<SweepRecord> {
            counts
                .iter()
                .enumerate()
                .map(|(i, (s, n))| SweepRecord::new(i as u32, vec![scale * s], vec![scale * n]).unwrap())
                .collect()
        };
        let (a, b) = (mk(1.0), mk(c));
        let ra: Vec<&SweepRecord> = a.iter().collect();
        let rb: Vec<&SweepRecord> = b.iter().collect();
        prop_assert_eq!(pl_ratio(&ra).unwrap(), pl_ratio(&rb).unwrap());
    }

    #[test]
    fn ratio_scaling_general(s in 1.0..2000.0f64, n in 1.0..2000.0f64, c in 0.1..10.0f64) {
        let a = SweepRecord::new(0, vec![s], vec![n]).unwrap();
        let b = SweepRecord::new(0, vec![c * s], vec![c * n]).unwrap();
        let (x, y) = (pl_ratio(&[&a]).unwrap()[0], pl_ratio(&[&b]).unwrap()[0]);
        prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn clamp_holds_over_many_random_subsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool: Vec<SweepRecord> = (0..200)
        .map(|i| {
            let n: f64 = rng.random_range(1.0..50.0);
            let s = if i % 3 == 0 { 0.25 * n } else { rng.random_range(0.0..50.0) };
            SweepRecord::new(i, vec![s], vec![n]).unwrap()
        })
        .collect();
    for _ in 0..50_000 {
        let k = rng.random_range(2..6);
        let idx = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        let t = resampled_trace(&pool, &idx).unwrap();
        assert!(t.u_pl[0] >= 0.0 && t.u_pl[0].is_finite());
    }
}
