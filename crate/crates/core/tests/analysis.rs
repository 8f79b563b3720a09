use nvramsey::analysis::*;
use nvramsey::ramsey::{forward_reconstruct, HyperfineSet, RamseyConfig, Trace};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simulated_ensemble(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.random_range(0..4);
            let hf = HyperfineSet::new((0..k).map(|_| rng.random_range(-800.0..800.0)).collect()).unwrap();
            let cfg = RamseyConfig {
                t2_star: rng.random_range(0.5..5.0),
                f_base: rng.random_range(4.0..6.0),
                pl_low: rng.random_range(75.0..90.0),
                ..Default::default()
            };
            forward_reconstruct(&hf, &cfg).unwrap().values
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn simulated_ensemble_properties() {
    let rows = simulated_ensemble(400, 1);
    let model = pca_fit(&rows).unwrap();
    assert_eq!(model.n_modes(), 200);
    for i in 0..model.n_modes() {
        for j in i..model.n_modes() {
            let d = dot(&model.modes[i], &model.modes[j]);
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((d - expect).abs() < 1e-10, "modes {i},{j}: {d}");
        }
    }
    assert!((model.explained_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    assert!(model.explained_ratio.windows(2).all(|w| w[0] >= w[1]));
    for r in rows.iter().take(20) {
        let s = pca_project(&model, r).unwrap();
        let back = pca_reconstruct(&model, &s, model.n_modes()).unwrap();
        assert!(back.iter().zip(r).all(|(a, b)| (a - b).abs() < 1e-8));
    }
    // leading-mode truncation error shrinks monotonically
    let s = pca_project(&model, &rows[0]).unwrap();
    let errs: Vec<f64> = [1, 5, 20, 100]
        .iter()
        .map(|&k| rmse_values(&pca_reconstruct(&model, &s, k).unwrap(), &rows[0]).unwrap())
        .collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn simulated_and_noisy_scores_overlap() {
    use nvramsey::noise::{synthesize, NoiseModel};
    let clean = simulated_ensemble(300, 2);
    let model = pca_fit(&clean).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let times: Vec<f64> = RamseyConfig::default().times();
    let project = |v: &[f64]| {
        let s = pca_project(&model, v).unwrap();
        (s[0], s[1])
    };
    let reference: Vec<(f64, f64)> = clean.iter().map(|r| project(r)).collect();
    let noisy: Vec<(f64, f64)> = clean
        .iter()
        .take(100)
        .map(|r| {
            let t = Trace::new(times.clone(), r.clone()).unwrap();
            let n = synthesize(&t, &NoiseModel { sigma_dc: 0.0, ..Default::default() }, &mut rng);
            project(&n.values)
        })
        .collect();
    assert!(hull_coverage(&reference, &noisy) > 0.5);
}

#[test]
fn metric_relations() {
    let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
    let a = Trace::new(t.clone(), (0..200).map(|i| 80.0 + (i as f64 * 0.3).sin()).collect()).unwrap();
    let b = Trace::new(t, a.values.iter().map(|v| v + 0.7).collect()).unwrap();
    // constant offset: equal-sigma chi2 / N is rmse² / σ²
    let sigma = 0.35;
    let (c, cn) = chi2(&b, &a, &vec![sigma; 200], 200.0).unwrap();
    let r = rmse(&b, &a).unwrap();
    assert!((cn - r * r / (sigma * sigma)).abs() < 1e-9);
    assert!((c - 200.0 * cn).abs() < 1e-9);
    assert!(fft_rmse(&b, &a).unwrap() < 1e-12);
    let rep = evaluate(&b, &a, Some(&vec![sigma; 200]), None).unwrap();
    assert_eq!(rep.chi2, Some(c));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_ensembles(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 12), 3..30)) {
        let model = match pca_fit(&rows) {
            Ok(m) => m,
            Err(_) => return Ok(()),
        };
        prop_assert!((model.explained_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        for r in &rows {
            let s = pca_project(&model, r).unwrap();
            let back = pca_reconstruct(&model, &s, 12).unwrap();
            prop_assert!(back.iter().zip(r).all(|(a, b)| (a - b).abs() < 1e-8));
        }
        for u in &model.modes {
            prop_assert!((dot(u, u) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rmse_symmetric_and_nonnegative(a in prop::collection::vec(-100.0..100.0f64, 5..50), shift in -3.0..3.0f64) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + shift * (i as f64).cos()).collect();
        let x = rmse_values(&a, &b).unwrap();
        prop_assert!(x >= 0.0);
        prop_assert_eq!(x, rmse_values(&b, &a).unwrap());
    }
}
