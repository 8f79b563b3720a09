use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nvramsey::dataset::{artifact_path, io, read_channel, read_manifest};
use nvramsey::ramsey::Grid;
use nvramsey::sweeps::SweepRecord;

fn nvramsey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvramsey")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nvramsey(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    nvramsey(args).status.code().unwrap()
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

/// JSON body after the `#` header lines.
fn body(stdout: &str) -> serde_json::Value {
    let json: String = stdout.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    serde_json::from_str(&json).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["loss-check"]), 0);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["simulate"]), 2, "missing seed");
    assert_eq!(code(&["--seed", "1", "simulate", "--t-start", "2", "--t-end", "1"]), 2);
    assert_eq!(code(&["reconstruct", "--n", "2", "--couplings", "1.0"]), 2);
    assert_eq!(code(&["reconstruct", "--n", "10", "--couplings", "1,1,1,1,1,1,1,1,1,1"]), 2);
    assert_eq!(code(&["pca", "--input", "/nonexistent/base"]), 1);
    assert_eq!(code(&["--seed", "1", "--config", "/nonexistent.json", "gen-corpus", "--out", "/tmp/x"]), 2);
}

#[test]
fn randomized_commands_print_their_seed() {
    let out = ok(&["--seed", "42", "simulate"]);
    assert!(out.lines().any(|l| l == "# seed: 42"));
    let out = ok(&["--seed", "42", "lattice-gen", "--n-baths", "3"]);
    assert!(out.contains("# seed: 42"));
    assert_eq!(body(&out)["n_baths"], 3);
    assert!(!ok(&["reconstruct", "--n", "1", "--couplings", "22.3"]).contains("# seed"));
}

#[test]
fn reconstruct_writes_one_trace() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("nv3");
    ok(&["reconstruct", "--n", "1", "--couplings", "22.3", "--t2", "1.7585", "--f", "5.0", "--out", &p(&base)]);
    let m = read_manifest(&base).unwrap();
    let rows = read_channel(&base, &m, "traces").unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].len(), 200);
    assert!((rows[0][0] - 100.0).abs() < 1e-4);
    // negative couplings parse as values, not flags
    ok(&["reconstruct", "--n", "2", "--couplings", "-300,120", "--out", &p(&dir.path().join("neg"))]);
}

#[test]
fn columns_format() {
    let out = ok(&["--format", "columns", "reconstruct", "--n", "1", "--couplings", "100"]);
    let rows: Vec<Vec<f64>> = out
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r.len() == 2));
    assert_eq!(rows[0][0], 0.0);
}

#[test]
fn same_seed_same_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: &str| {
        let base = dir.path().join(sub).join("c");
        ok(&["--seed", seed, "gen-corpus", "--n-configs", "20", "--traces-per-config", "3", "--out", &p(&base)]);
        ["manifest", "traces", "noisy", "labels", "baths"]
            .iter()
            .map(|c| fs::read(artifact_path(&base, c)).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("c", "6")[1], run("a", "5")[1]);
}

#[test]
fn corpus_split_and_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("c");
    ok(&[
        "--seed", "3", "gen-corpus", "--n-configs", "10", "--traces-per-config", "2", "--split", "0.8",
        "--t2-range", "1", "2", "--out", &p(&base),
    ]);
    let m = read_manifest(&base).unwrap();
    let s = m.split.unwrap();
    assert_eq!((s.train.len(), s.validation.len()), (8, 2));
    assert_eq!(m.ranges.unwrap().t2_star, (1.0, 2.0));

    let tok = dir.path().join("tok");
    let out = ok(&["tokens", "--input", &p(&base), "--index", "3", "--n-meta", "2", "--out", &p(&tok)]);
    assert_eq!(body(&out)["t_tot"], 1 + 2 + 200 + 101);
    let tm = read_manifest(&tok).unwrap();
    assert_eq!(read_channel(&tok, &tm, "tokens").unwrap()[0].len(), 304);
    assert_eq!(code(&["tokens", "--input", &p(&base), "--n-meta", "5"]), 2);
}

#[test]
fn tokens_without_labels_need_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("r");
    ok(&["reconstruct", "--n", "1", "--couplings", "50", "--out", &p(&base)]);
    assert_eq!(code(&["tokens", "--input", &p(&base)]), 2);
    ok(&["tokens", "--input", &p(&base), "--pl", "80", "--t2", "1", "--f", "5"]);
}

#[test]
fn synth_then_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref");
    let noisy = dir.path().join("noisy");
    let model_path = dir.path().join("model.json");
    ok(&["reconstruct", "--n", "1", "--couplings", "300", "--pl-low", "75", "--t2", "1.5", "--out", &p(&reference)]);
    ok(&["--seed", "9", "synth", "--input", &p(&reference), "--copies", "2000", "--out", &p(&noisy)]);
    let out = ok(&[
        "calibrate-noise", "--sweeps", &p(&noisy), "--reference", &p(&reference), "--out", &p(&model_path),
    ]);
    let v = body(&out);
    assert_eq!(v["n_sweeps"], 2000);
    let dc = v["model"]["sigma_dc"].as_f64().unwrap();
    assert!((dc / 3.928 - 1.0).abs() < 0.06, "{dc}");
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model_path).unwrap()).unwrap();
    assert_eq!(saved, v["model"]);
    // the fitted model feeds back in as a config
    ok(&["--seed", "1", "--config", &p(&model_path), "synth", "--input", &p(&reference), "--out", &p(&dir.path().join("again"))]);
    let cols = ok(&["--format", "columns", "calibrate-noise", "--sweeps", &p(&noisy), "--reference", &p(&reference)]);
    assert!(cols.contains("# residual histogram"));
}

#[test]
fn resample_writes_one_set_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let sweeps = dir.path().join("sw");
    let recs: Vec<SweepRecord> = (0..30u32)
        .map(|i| {
            let n: Vec<f64> = (0..200).map(|j| 1000.0 + ((i as usize * 7 + j) % 13) as f64).collect();
            let s: Vec<f64> = n.iter().enumerate().map(|(j, v)| 0.8 * v + ((i as usize + j) % 5) as f64).collect();
            SweepRecord::new(i, s, n).unwrap()
        })
        .collect();
    io::write_sweeps(&sweeps, Grid::default(), &recs, "sw").unwrap();
    let out_base = dir.path().join("res");
    let out = ok(&["--seed", "4", "resample", "--sweeps", &p(&sweeps), "--k", "5,25", "--n-rep", "40", "--out", &p(&out_base)]);
    let v = body(&out);
    assert_eq!(v["results"][0]["k"], 5);
    for k in [5, 25] {
        let base = Path::new(&format!("{}.k{k}", p(&out_base))).to_path_buf();
        let m = read_manifest(&base).unwrap();
        assert_eq!(m.n_traces, 40);
        let u = read_channel(&base, &m, "uncert").unwrap();
        assert!(u.iter().flatten().all(|x| *x >= 0.0));
    }
    assert_eq!(code(&["--seed", "4", "resample", "--sweeps", &p(&sweeps), "--k", "31"]), 2);
    assert_eq!(code(&["resample", "--sweeps", &p(&sweeps)]), 2);
}

#[test]
fn pca_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("c");
    ok(&["--seed", "2", "gen-corpus", "--n-configs", "30", "--traces-per-config", "2", "--out", &p(&base)]);
    let report = dir.path().join("pca.json");
    let out = ok(&["pca", "--input", &p(&base), "--modes", "4", "--out", &p(&report)]);
    let v = body(&out);
    let ratios: Vec<f64> = serde_json::from_value(v["explained_ratio"].clone()).unwrap();
    assert_eq!(ratios.len(), 4);
    assert!(ratios.windows(2).all(|w| w[0] >= w[1]));
    assert!(report.exists());

    let out = ok(&["eval", "--pred", &p(&base), "--reference", &p(&base), "--ref-channel", "traces"]);
    let v = body(&out);
    assert_eq!(v["rmse"], 0.0);
    let out = ok(&["eval", "--pred", &p(&base), "--reference", &p(&base), "--sigma", "4.0", "--nu", "190"]);
    assert!(body(&out)["chi2_nu"].as_f64().unwrap() > 0.0);
    assert_eq!(code(&["eval", "--pred", &p(&base), "--reference", &p(&base), "--ref-index", "999"]), 2);
}

#[test]
fn noise_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("n");
    ok(&["--seed", "8", "gen-noise-corpus", "--n-traces", "50", "--level-range", "80", "90", "--out", &p(&base)]);
    let m = read_manifest(&base).unwrap();
    let x = read_channel(&base, &m, "noisy").unwrap();
    let u = read_channel(&base, &m, "uncert").unwrap();
    assert_eq!(x.len(), 50);
    for (a, b) in x.iter().flatten().zip(u.iter().flatten()) {
        assert!((b - a.max(0.0).sqrt()).abs() < 1e-4);
    }
    assert_eq!(code(&["--seed", "8", "gen-noise-corpus", "--level-range", "90", "80", "--out", &p(&base)]), 2);
}

#[test]
fn lattice_gen_writes_baths() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("b");
    ok(&["--seed", "6", "lattice-gen", "--n-baths", "5", "--out", &p(&base)]);
    let baths = io::read_baths(&base).unwrap();
    assert_eq!(baths.len(), 5);
    assert!(baths.iter().flat_map(|b| &b.spins).all(|s| s.distance() <= 6.0));
    assert_eq!(code(&["--seed", "6", "lattice-gen", "--p13", "2"]), 2);
}
