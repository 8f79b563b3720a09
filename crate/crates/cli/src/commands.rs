use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use nvramsey::analysis::{self, PcaReport};
use nvramsey::dataset::{
    self, config_rng, io as dio, CorpusSpec, DatasetManifest, ManifestKind, NoiseCorpusSpec,
};
use nvramsey::features::{self, build_tokens, scale_metadata};
use nvramsey::lattice::{BathGenerator, LatticeSpec};
use nvramsey::losses::{self, LossWeights, StftConfig};
use nvramsey::noise::{self, NoiseModel};
use nvramsey::ramsey::{forward_reconstruct, Grid, HyperfineSet, RamseyConfig, Trace};
use nvramsey::spectrum;
use nvramsey::sweeps::{self, STANDARD_K};

use crate::*;

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::LatticeGen(a) => lattice_gen(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Reconstruct(a) => reconstruct(cli, a),
        Command::CalibrateNoise(a) => calibrate_noise(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::Resample(a) => resample(cli, a),
        Command::Pca(a) => pca(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::LossCheck => loss_check(),
        Command::Tokens(a) => tokens(cli, a),
        Command::GenCorpus(a) => gen_corpus(cli, a),
        Command::GenNoiseCorpus(a) => gen_noise_corpus(cli, a),
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn need_seed(cli: &Cli, cmd: &str) -> CliResult<u64> {
    cli.seed
        .ok_or_else(|| CliError::Usage(format!("{cmd} is randomized and requires --seed")))
}

fn load_config<T: DeserializeOwned + Default>(cli: &Cli) -> CliResult<T> {
    match &cli.config {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn range(v: &Option<Vec<f64>>) -> Option<(f64, f64)> {
    v.as_ref().map(|r| (r[0], r[1]))
}

fn apply_lattice(spec: &mut LatticeSpec, f: &LatticeFlags) {
    set(&mut spec.a, f.a);
    set(&mut spec.n_super, f.n_super);
    set(&mut spec.p13, f.p13);
    set(&mut spec.dopant_cap, f.dopant_cap);
    set(&mut spec.r_cut, f.r_cut);
    set(&mut spec.alpha, f.alpha);
}

fn apply_grid(grid: &mut Grid, f: &GridFlags) {
    set(&mut grid.n_points, f.n_points);
    set(&mut grid.t_start, f.t_start);
    set(&mut grid.t_end, f.t_end);
}

fn ramsey_from(cli: &Cli, f: &RamseyFlags) -> CliResult<RamseyConfig> {
    let mut cfg: RamseyConfig = load_config(cli)?;
    set(&mut cfg.t2_star, f.t2);
    set(&mut cfg.f_base, f.f);
    set(&mut cfg.pl_low, f.pl_low);
    set(&mut cfg.pl_high, f.pl_high);
    if let Some(a) = f.n14 {
        cfg.a_par_n14 = a;
        cfg.include_n14 = true;
    }
    apply_grid(&mut cfg.grid, &f.grid);
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

struct Out {
    w: io::BufWriter<io::StdoutLock<'static>>,
}

impl Out {
    fn new(cmd: &str, seed: Option<u64>) -> CliResult<Self> {
        let mut w = io::BufWriter::new(io::stdout().lock());
        writeln!(w, "# nvramsey {cmd}")?;
        if let Some(s) = seed {
            writeln!(w, "# seed: {s}")?;
        }
        Ok(Self { w })
    }

    fn line(&mut self, s: impl std::fmt::Display) -> CliResult {
        writeln!(self.w, "{s}")?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, v: &T) -> CliResult {
        serde_json::to_writer_pretty(&mut self.w, v)?;
        writeln!(self.w)?;
        Ok(())
    }

    fn row(&mut self, cols: &[f64]) -> CliResult {
        let s: Vec<String> = cols.iter().map(|v| format!("{v:.10e}")).collect();
        writeln!(self.w, "{}", s.join(" "))?;
        Ok(())
    }

    fn finish(mut self) -> CliResult {
        self.w.flush()?;
        Ok(())
    }
}

/// Rows of `channel` (default: `noisy` if listed, else `traces`) widened to f64.
fn load_rows(base: &Path, channel: Option<&str>) -> CliResult<(DatasetManifest, PathBuf, Vec<Vec<f64>>)> {
    let base = dio::base_path(base);
    let m = dio::read_manifest(&base)?;
    let ch = match channel {
        Some(c) => c.to_string(),
        None if m.has("noisy") => "noisy".into(),
        None => "traces".into(),
    };
    let rows = dio::read_channel(&base, &m, &ch)?
        .into_iter()
        .map(|r| r.into_iter().map(f64::from).collect())
        .collect();
    Ok((m, base, rows))
}

fn trace_of(m: &DatasetManifest, values: Vec<f64>) -> CliResult<Trace> {
    Ok(Trace::new(m.grid.times(), values)?)
}

fn pick<'a>(rows: &'a [Vec<f64>], i: usize, what: &str) -> CliResult<&'a Vec<f64>> {
    rows.get(i)
        .ok_or_else(|| CliError::Usage(format!("{what} index {i} out of range ({} rows)", rows.len())))
}

fn lattice_gen(cli: &Cli, a: &LatticeArgs) -> CliResult {
    let seed = need_seed(cli, "lattice-gen")?;
    let mut spec: LatticeSpec = load_config(cli)?;
    apply_lattice(&mut spec, &a.lattice);
    spec.seed = seed;
    spec.validate().map_err(usage)?;
    if a.n_baths == 0 {
        return Err(usage("--n-baths must be at least 1"));
    }
    let gen = BathGenerator::new(&spec)?;
    let baths: Vec<_> = (0..a.n_baths)
        .map(|b| gen.sample_with(&mut config_rng(seed, b as u64)))
        .collect();

    if let Some(out) = &a.out {
        ensure_parent(out)?;
        let mut buf = Vec::new();
        for (i, b) in baths.iter().enumerate() {
            dio::encode_bath_line(&dio::BathRecord::from_bath(i as u32, b), &mut buf)?;
        }
        fs::write(dio::artifact_path(out, "baths"), &buf)?;
        let mut m = DatasetManifest::new(ManifestKind::Baths, &name_of(out), Grid::default(), seed);
        m.n_configs = a.n_baths as u64;
        m.lattice = Some(spec);
        m.nv = Some(*gen.nv());
        m.payloads.push(dataset::PayloadEntry {
            channel: "baths".into(),
            bytes: buf.len() as u64,
        });
        dio::write_manifest(out, &m)?;
    }

    let mut o = Out::new("lattice-gen", Some(seed))?;
    match cli.format {
        Format::Columns => {
            o.line("# config spin x_A y_A z_A a_par_kHz")?;
            for (c, b) in baths.iter().enumerate() {
                for (s, spin) in b.spins.iter().enumerate() {
                    let p = spin.position;
                    o.row(&[c as f64, s as f64, p[0], p[1], p[2], spin.a_par])?;
                }
            }
        }
        Format::Manifest => {
            let counts: Vec<usize> = baths.iter().map(|b| b.len()).collect();
            let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
            o.json(&json!({
                "n_baths": a.n_baths,
                "box_side_A": spec.box_side(),
                "r_nn_A": spec.r_nn(),
                "boundary_scale_kHz": spec.boundary_scale(),
                "eligible_in_box": gen.eligible().len(),
                "mean_n_c13": mean,
                "first_bath": baths[0],
            }))?;
        }
    }
    o.finish()
}

fn emit_trace(cli: &Cli, o: &mut Out, trace: &Trace, summary: serde_json::Value) -> CliResult {
    match cli.format {
        Format::Columns => {
            o.line("# t_us pl_percent")?;
            for (t, v) in trace.times.iter().zip(&trace.values) {
                o.row(&[*t, *v])?;
            }
            Ok(())
        }
        Format::Manifest => o.json(&summary),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> CliResult {
    let seed = need_seed(cli, "simulate")?;
    let cfg = ramsey_from(cli, &a.ramsey)?;
    let mut spec = LatticeSpec { seed, ..LatticeSpec::default() };
    apply_lattice(&mut spec, &a.lattice);
    spec.validate().map_err(usage)?;
    let gen = BathGenerator::new(&spec)?;
    let bath = dataset::draw_bath(&gen, &mut config_rng(seed, 0));
    let couplings = bath.couplings();
    let trace = forward_reconstruct(&HyperfineSet::new(couplings.clone())?, &cfg)?;
    let params = json!({ "couplings_kHz": couplings, "ramsey": cfg, "lattice": spec });
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        dio::write_trace_set(out, &name_of(out), cfg.grid, &[trace.values.clone()], seed, params.clone())?;
    }
    let mut o = Out::new("simulate", Some(seed))?;
    emit_trace(cli, &mut o, &trace, params)?;
    o.finish()
}

fn reconstruct(cli: &Cli, a: &ReconstructArgs) -> CliResult {
    if a.n != a.couplings.len() {
        return Err(usage(format!("--n {} but {} couplings given", a.n, a.couplings.len())));
    }
    let hf = HyperfineSet::new(a.couplings.clone()).map_err(usage)?;
    let cfg = ramsey_from(cli, &a.ramsey)?;
    let trace = forward_reconstruct(&hf, &cfg)?;
    let params = json!({ "couplings_kHz": a.couplings, "ramsey": cfg });
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        dio::write_trace_set(out, &name_of(out), cfg.grid, &[trace.values.clone()], 0, params.clone())?;
    }
    let mut o = Out::new("reconstruct", None)?;
    emit_trace(cli, &mut o, &trace, params)?;
    o.finish()
}

fn calibrate_noise(cli: &Cli, a: &CalibrateArgs) -> CliResult {
    if a.bins == 0 || a.hist_bins == 0 {
        return Err(usage("--bins and --hist-bins must be positive"));
    }
    if !(a.floor > 0.0) {
        return Err(usage("--floor must be positive"));
    }
    let (sm, _, sweep_rows) = load_rows(&a.sweeps, None)?;
    let (rm, _, ref_rows) = load_rows(&a.reference, Some("traces"))?;
    let reference = trace_of(&rm, pick(&ref_rows, 0, "reference")?.clone())?;
    let sweeps = sweep_rows
        .into_iter()
        .map(|r| trace_of(&sm, r))
        .collect::<CliResult<Vec<_>>>()?;
    let res = noise::compute_residuals(&sweeps, &reference)?;
    let fit = noise::fit_sigma(&res, a.bins)?;
    let sigma_dc = noise::fit_dc_min(&res, a.min_sweeps)?;
    let model = NoiseModel {
        b0: fit.b0,
        b1: fit.b1,
        b2: fit.b2,
        sigma_dc,
        sigma_floor: a.floor,
    };
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        fs::write(out, serde_json::to_string_pretty(&model)? + "\n")?;
    }

    let mut o = Out::new("calibrate-noise", None)?;
    match cli.format {
        Format::Manifest => o.json(&json!({ "model": model, "bins": fit.bins, "n_sweeps": res.n_sweeps() }))?,
        Format::Columns => {
            o.line("# sigma bins: y_center std count fitted_sigma")?;
            for b in &fit.bins {
                o.row(&[b.y_center, b.std, b.count as f64, model.sigma_of_y(b.y_center)])?;
            }
            // drift-removed residual histogram
            let l = res.points_per_sweep;
            let r: Vec<f64> = res
                .pairs
                .iter()
                .enumerate()
                .map(|(i, (_, r))| r - res.per_sweep_means[i / l])
                .collect();
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let width = ((hi - lo) / a.hist_bins as f64).max(f64::MIN_POSITIVE);
            let mut counts = vec![0usize; a.hist_bins];
            for v in &r {
                let i = (((v - lo) / width) as usize).min(a.hist_bins - 1);
                counts[i] += 1;
            }
            o.line("# residual histogram: center count density")?;
            for (i, c) in counts.iter().enumerate() {
                let center = lo + (i as f64 + 0.5) * width;
                o.row(&[center, *c as f64, *c as f64 / (r.len() as f64 * width)])?;
            }
        }
    }
    o.finish()
}

fn synth(cli: &Cli, a: &SynthArgs) -> CliResult {
    let seed = need_seed(cli, "synth")?;
    let model: NoiseModel = load_config(cli)?;
    model.validate().map_err(usage)?;
    if a.copies == 0 {
        return Err(usage("--copies must be at least 1"));
    }
    let (m, _, rows) = load_rows(&a.input, Some("traces"))?;
    let mut clean = Vec::with_capacity(rows.len() * a.copies);
    let mut noisy = Vec::with_capacity(rows.len() * a.copies);
    for (i, row) in rows.iter().enumerate() {
        let t = trace_of(&m, row.clone())?;
        for c in 0..a.copies {
            let mut rng = config_rng(seed, (i * a.copies + c) as u64);
            noisy.push(noise::synthesize(&t, &model, &mut rng).values);
            clean.push(row.clone());
        }
    }
    ensure_parent(&a.out)?;
    let mut out = DatasetManifest::new(ManifestKind::Traces, &name_of(&a.out), m.grid, seed);
    out.n_traces = noisy.len() as u64;
    out.n_configs = rows.len() as u64;
    out.traces_per_config = a.copies as u64;
    out.noise = Some(model);
    out.payloads.push(dio::write_rows(&a.out, "traces", &clean)?);
    out.payloads.push(dio::write_rows(&a.out, "noisy", &noisy)?);
    dio::write_manifest(&a.out, &out)?;

    let mut o = Out::new("synth", Some(seed))?;
    match cli.format {
        Format::Manifest => o.json(&out)?,
        Format::Columns => {
            o.line("# row t_us clean noisy")?;
            for (i, (c, n)) in clean.iter().zip(&noisy).enumerate() {
                for ((t, cv), nv) in m.grid.times().iter().zip(c).zip(n) {
                    o.row(&[i as f64, *t, *cv, *nv])?;
                }
            }
        }
    }
    o.finish()
}

fn resample(cli: &Cli, a: &ResampleArgs) -> CliResult {
    let seed = need_seed(cli, "resample")?;
    if a.n_rep == 0 {
        return Err(usage("--n-rep must be at least 1"));
    }
    let (m, records) = dio::read_sweeps(&a.sweeps)?;
    let n = records.len();
    let ks: Vec<usize> = if a.k.is_empty() {
        STANDARD_K.iter().copied().filter(|&k| k <= n).collect()
    } else {
        a.k.clone()
    };
    if let Some(k) = ks.iter().find(|&&k| k < 2 || k > n) {
        return Err(usage(format!("K = {k} outside 2..={n}")));
    }
    let mut summary = Vec::new();
    for &k in &ks {
        let sets = sweeps::resample(&records, k, a.n_rep, seed)?;
        let traces = sets
            .iter()
            .map(|s| sweeps::resampled_trace(&records, s))
            .collect::<nvramsey::Result<Vec<_>>>()?;
        let mean_u = traces.iter().flat_map(|t| &t.u_pl).sum::<f64>() / (traces.len() * m.row_len) as f64;
        let mean_pl = traces.iter().flat_map(|t| &t.pl).sum::<f64>() / (traces.len() * m.row_len) as f64;
        if let Some(out) = &a.out {
            let base = PathBuf::from(format!("{}.k{k}", out.display()));
            ensure_parent(&base)?;
            let pl: Vec<Vec<f64>> = traces.iter().map(|t| t.pl.clone()).collect();
            let u: Vec<Vec<f64>> = traces.iter().map(|t| t.u_pl.clone()).collect();
            let mut rm = DatasetManifest::new(ManifestKind::Traces, &name_of(&base), m.grid, seed);
            rm.n_traces = pl.len() as u64;
            rm.n_configs = pl.len() as u64;
            rm.traces_per_config = 1;
            rm.params = json!({ "k": k, "subsets": sets });
            rm.payloads.push(dio::write_rows(&base, "traces", &pl)?);
            rm.payloads.push(dio::write_rows(&base, "uncert", &u)?);
            dio::write_manifest(&base, &rm)?;
        }
        summary.push((k, sets.len(), mean_pl, mean_u));
    }
    let mut o = Out::new("resample", Some(seed))?;
    match cli.format {
        Format::Columns => {
            o.line("# k n_subsets mean_pl mean_u_pl")?;
            for (k, s, p, u) in summary {
                o.row(&[k as f64, s as f64, p, u])?;
            }
        }
        Format::Manifest => {
            let v: Vec<_> = summary
                .iter()
                .map(|(k, s, p, u)| json!({ "k": k, "n_subsets": s, "mean_pl": p, "mean_u_pl": u }))
                .collect();
            o.json(&json!({ "n_sweeps": n, "results": v }))?;
        }
    }
    o.finish()
}

fn pca(cli: &Cli, a: &PcaArgs) -> CliResult {
    let (_, _, rows) = load_rows(&a.input, Some(a.channel.as_deref().unwrap_or("traces")))?;
    let model = analysis::pca_fit(&rows)?;
    let report = PcaReport::leading(&model, a.modes);
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        fs::write(out, serde_json::to_string(&report)? + "\n")?;
    }
    let mut o = Out::new("pca", None)?;
    match cli.format {
        Format::Manifest => o.json(&json!({
            "n_fit": report.n_fit,
            "explained_ratio": report.explained_ratio,
            "score_std": report.score_std,
        }))?,
        Format::Columns => {
            let ratios: Vec<String> = report.explained_ratio.iter().map(|r| format!("{r:.6}")).collect();
            o.line(format!("# explained_ratio {}", ratios.join(" ")))?;
            o.line("# index pc1 pc2")?;
            for (i, r) in rows.iter().enumerate() {
                let s = analysis::pca_project(&model, r)?;
                o.row(&[i as f64, s[0], s.get(1).copied().unwrap_or(0.0)])?;
            }
        }
    }
    o.finish()
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult {
    let (pm, _, prow) = load_rows(&a.pred, Some("traces"))?;
    let (rm, _, rrow) = load_rows(&a.reference, a.ref_channel.as_deref())?;
    let pred = trace_of(&pm, pick(&prow, a.pred_index, "prediction")?.clone())?;
    let reference = trace_of(&rm, pick(&rrow, a.ref_index, "reference")?.clone())?;
    let sigmas = match (&a.sigmas, a.sigma) {
        (Some(_), Some(_)) => return Err(usage("give --sigmas or --sigma, not both")),
        (Some(p), None) => {
            let (_, _, u) = load_rows(p, Some("uncert"))?;
            Some(pick(&u, a.ref_index, "uncertainty")?.clone())
        }
        (None, Some(s)) => Some(vec![s; reference.len()]),
        (None, None) => None,
    };
    let report = analysis::evaluate(&pred, &reference, sigmas.as_deref(), a.nu)?;
    let mut o = Out::new("eval", None)?;
    match cli.format {
        Format::Manifest => o.json(&report)?,
        Format::Columns => {
            o.line(format!("# rmse {} fft_rmse {}", report.rmse, report.fft_rmse))?;
            if let (Some(c), Some(cn)) = (report.chi2, report.chi2_nu) {
                o.line(format!("# chi2 {c} chi2_nu {cn}"))?;
            }
            o.line("# bin f_MHz pred_fft ref_fft")?;
            let p = analysis::normalized_fft(&pred.values)?;
            let r = analysis::normalized_fft(&reference.values)?;
            let dt = pm.grid.dt();
            for (k, (pv, rv)) in p.iter().zip(&r).enumerate() {
                o.row(&[k as f64, spectrum::bin_frequency(k, pred.len(), dt), *pv, *rv])?;
            }
        }
    }
    o.finish()
}

/// `(label, computed, expected)` for every closed-form loss example.
pub fn loss_examples() -> nvramsey::Result<Vec<(String, f64, f64)>> {
    let e = std::f64::consts::E;
    let cfg = StftConfig::default();
    let w = LossWeights::default();
    let x: Vec<f64> = (0..200).map(|i| 80.0 + 5.0 * (0.157 * i as f64).cos()).collect();
    let shifted: Vec<f64> = x.iter().map(|v| v + 0.25).collect();
    let mut one_hot = [0.0; 11];
    one_hot[0] = 1.0;
    let mut sat = [0.0; 11];
    sat[4] = 1e3;
    let target = [5.0, 6.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let pred_a = [6.0, 7.0, 3.0, -8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let pred_b = [6.0, 7.0, 90.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let sm = features::softmax(&[0.0, 3f64.ln()]);
    Ok(vec![
        ("smooth_l1(0, beta=1)".into(), losses::smooth_l1(0.0, 1.0), 0.0),
        ("smooth_l1(0.5, beta=1)".into(), losses::smooth_l1(0.5, 1.0), 0.125),
        ("smooth_l1(2, beta=1)".into(), losses::smooth_l1(2.0, 1.0), 1.5),
        ("logspace_mse(0, e-1)".into(), losses::logspace_mse(0.0, e - 1.0)?, 1.0),
        ("cross_entropy(uniform 11)".into(), losses::cross_entropy(&[0.0; 11], 0)?, 11f64.ln()),
        ("cross_entropy([1,0..0], 0)".into(), losses::cross_entropy(&one_hot, 0)?, ((e + 10.0) / e).ln()),
        ("cross_entropy(saturated)".into(), losses::cross_entropy(&sat, 4)?, 0.0),
        ("masked_smooth_l1(n=2, r=(1,1))".into(), losses::masked_smooth_l1(&pred_a, &target, 2, 1.0)?, 0.5),
        (
            "masked_smooth_l1 beyond n".into(),
            losses::masked_smooth_l1(&pred_b, &target, 2, 1.0)?,
            losses::masked_smooth_l1(&pred_a, &target, 2, 1.0)?,
        ),
        ("total_hf_loss(2, 3)".into(), losses::total_hf_loss(2.0, 3.0, &w), 5.0),
        ("core_loss(x, x)".into(), losses::core_loss(&x, &x, &cfg, &w)?, 0.0),
        ("core_loss(x + 0.25, x)".into(), losses::core_loss(&shifted, &x, &cfg, &w)?, 200.0 * 0.0625),
        ("softmax([0, ln 3])[1]".into(), sm[1], 0.75),
    ])
}

fn loss_check() -> CliResult {
    let rows = loss_examples()?;
    let mut o = Out::new("loss-check", None)?;
    o.line(format!("{:<34} {:>22} {:>22} {}", "# check", "value", "expected", "status"))?;
    let mut failed = 0;
    for (name, v, expect) in &rows {
        let ok = (v - expect).abs() <= 1e-12;
        if !ok {
            failed += 1;
        }
        o.line(format!("{name:<34} {v:>22} {expect:>22} {}", if ok { "PASS" } else { "FAIL" }))?;
    }
    o.finish()?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} loss check(s) failed")));
    }
    Ok(())
}

fn tokens(cli: &Cli, a: &TokensArgs) -> CliResult {
    if !(2..=3).contains(&a.n_meta) {
        return Err(usage(format!("--n-meta must be 2 or 3, got {}", a.n_meta)));
    }
    let (m, base, rows) = load_rows(&a.input, a.channel.as_deref())?;
    let labels = if m.has("labels") { Some(dio::read_labels(&base, &m)?) } else { None };
    let indices: Vec<usize> = match a.index {
        Some(i) => {
            pick(&rows, i, "trace")?;
            vec![i]
        }
        None => (0..rows.len()).collect(),
    };
    let mut seqs = Vec::with_capacity(indices.len());
    for &i in &indices {
        let label = labels.as_ref().map(|l| l[i]);
        let get = |flag: Option<f64>, from: fn(&dataset::LabelRecord) -> f64, what: &str| {
            flag.or_else(|| label.as_ref().map(from))
                .ok_or_else(|| CliError::Usage(format!("--{what} is required when the input has no labels")))
        };
        let pl = get(a.pl, |l| l.pl_low, "pl")?;
        let t2 = get(a.t2, |l| l.t2_star, "t2")?;
        let f = get(a.f, |l| l.f_base, "f")?;
        let meta = scale_metadata(pl, t2, f).map_err(usage)?;
        seqs.push(build_tokens(&rows[i], &meta, a.n_meta)?);
    }
    let t_tot = seqs[0].len();
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        let values: Vec<Vec<f64>> = seqs.iter().map(|s| s.values()).collect();
        let mut tm = DatasetManifest::new(ManifestKind::Tokens, &name_of(out), m.grid, m.seed);
        tm.n_traces = values.len() as u64;
        tm.row_len = t_tot;
        tm.params = json!({
            "n_meta": a.n_meta,
            "type_ids": seqs[0].type_ids.iter().map(|t| t.id()).collect::<Vec<_>>(),
            "source_rows": indices,
        });
        tm.payloads.push(dio::write_rows(out, "tokens", &values)?);
        dio::write_manifest(out, &tm)?;
    }
    let mut o = Out::new("tokens", None)?;
    match cli.format {
        Format::Columns => {
            o.line("# row position type_id value")?;
            for (s, &i) in seqs.iter().zip(&indices) {
                for ((p, t), v) in s.positions.iter().zip(&s.type_ids).zip(s.values()) {
                    o.row(&[i as f64, *p as f64, t.id() as f64, v])?;
                }
            }
        }
        Format::Manifest => o.json(&json!({
            "n_sequences": seqs.len(),
            "t_tot": t_tot,
            "n_meta": a.n_meta,
            "first": seqs[0],
        }))?,
    }
    o.finish()
}

fn gen_corpus(cli: &Cli, a: &CorpusArgs) -> CliResult {
    let seed = need_seed(cli, "gen-corpus")?;
    let mut spec: CorpusSpec = load_config(cli)?;
    set(&mut spec.n_configs, a.n_configs);
    set(&mut spec.traces_per_config, a.traces_per_config);
    if a.no_noise {
        spec.noise_on = false;
    }
    set(&mut spec.ranges.t2_star, range(&a.t2_range));
    set(&mut spec.ranges.f_base, range(&a.f_range));
    set(&mut spec.ranges.pl_low, range(&a.pl_low_range));
    apply_lattice(&mut spec.lattice, &a.lattice);
    apply_grid(&mut spec.ramsey.grid, &a.grid);
    spec.seed = seed;
    spec.lattice.seed = seed;
    spec.name = name_of(&a.out);
    spec.validate().map_err(usage)?;
    if let Some(f) = a.split {
        if !(f > 0.0 && f < 1.0) || spec.n_configs < 2 {
            return Err(usage("--split needs a fraction in (0, 1) and at least 2 configurations"));
        }
    }
    ensure_parent(&a.out)?;
    let mut m = dataset::generate_corpus(&spec, &a.out)?;
    if let Some(f) = a.split {
        m.split = Some(dataset::split(&m, f)?);
        dio::write_manifest(&a.out, &m)?;
    }
    let mut o = Out::new("gen-corpus", Some(seed))?;
    match cli.format {
        Format::Manifest => o.json(&m)?,
        Format::Columns => {
            o.line("# n_configs traces_per_config n_traces")?;
            o.row(&[m.n_configs as f64, m.traces_per_config as f64, m.n_traces as f64])?;
        }
    }
    o.finish()
}

fn gen_noise_corpus(cli: &Cli, a: &NoiseCorpusArgs) -> CliResult {
    let seed = need_seed(cli, "gen-noise-corpus")?;
    let mut spec: NoiseCorpusSpec = load_config(cli)?;
    set(&mut spec.n_traces, a.n_traces);
    set(&mut spec.level_range, range(&a.level_range));
    apply_grid(&mut spec.grid, &a.grid);
    spec.seed = seed;
    spec.name = name_of(&a.out);
    spec.grid.validate().map_err(usage)?;
    spec.noise.validate().map_err(usage)?;
    let (lo, hi) = spec.level_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(usage(format!("level range [{lo}, {hi}] must be positive and ordered")));
    }
    ensure_parent(&a.out)?;
    let m = dataset::generate_pure_noise(&spec, &a.out)?;
    let mut o = Out::new("gen-noise-corpus", Some(seed))?;
    match cli.format {
        Format::Manifest => o.json(&m)?,
        Format::Columns => {
            o.line("# n_traces")?;
            o.row(&[m.n_traces as f64])?;
        }
    }
    o.finish()
}
