//! Corpus generation and train/validation splitting.
//!
//! Configuration `c` of a corpus draws everything (its bath, then each
//! trace's parameters and noise, in trace order) from ChaCha8 stream `c` of
//! the corpus seed. Output therefore does not depend on how configurations
//! are scheduled across threads; batches are computed in parallel and
//! written in configuration order.

pub mod io;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{BathGenerator, LatticeSpec, NuclearBath};
use crate::noise::{synthesize_in_place, NoiseModel};
use crate::ramsey::{forward_reconstruct, Grid, HyperfineSet, RamseyConfig, MAX_C13};

pub use io::{
    artifact_path, read_channel, read_labels, read_manifest, BathRecord, DatasetManifest, ManifestKind,
    PayloadEntry, SplitAssignment, LABEL_RECORD_BYTES,
};

/// Coupling slots in a label.
pub const N_SLOTS: usize = 10;

/// Traces computed per parallel batch before it is flushed to disk.
const BATCH_TRACES: usize = 16_384;

/// Uniform sampling intervals for per-trace parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingRanges {
    /// µs.
    pub t2_star: (f64, f64),
    /// MHz.
    pub f_base: (f64, f64),
    /// PL(%).
    pub pl_low: (f64, f64),
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            t2_star: (0.5, 10.0),
            f_base: (4.0, 6.0),
            pl_low: (75.0, 90.0),
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("t2_star", self.t2_star), ("f_base", self.f_base), ("pl_low", self.pl_low)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("{name} range [{lo}, {hi}] is not an interval")));
            }
        }
        if !(self.t2_star.0 > 0.0) {
            return Err(invalid("t2_star range must be positive"));
        }
        if self.pl_low.0 < 75.0 || self.pl_low.1 > 90.0 {
            return Err(invalid(format!("pl_low range {:?} leaves [75, 90]", self.pl_low)));
        }
        Ok(())
    }
}

/// Supervision targets for one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub config_id: u32,
    pub n_c13: usize,
    pub t2_star: f64,
    pub pl_low: f64,
    pub f_base: f64,
    /// kHz, by descending magnitude, zero-padded.
    pub couplings: [f64; N_SLOTS],
    pub mask: [u8; N_SLOTS],
}

impl LabelRecord {
    pub fn new(config_id: u32, couplings: &[f64], t2_star: f64, pl_low: f64, f_base: f64) -> Result<Self> {
        if couplings.len() > N_SLOTS {
            return Err(invalid(format!("{} couplings exceed {N_SLOTS} slots", couplings.len())));
        }
        let mut sorted = couplings.to_vec();
        sorted.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        let mut slots = [0.0; N_SLOTS];
        let mut mask = [0u8; N_SLOTS];
        for (i, c) in sorted.iter().enumerate() {
            slots[i] = *c;
            mask[i] = 1;
        }
        Ok(Self {
            config_id,
            n_c13: couplings.len(),
            t2_star,
            pl_low,
            f_base,
            couplings: slots,
            mask,
        })
    }

    pub fn active_couplings(&self) -> &[f64] {
        &self.couplings[..self.n_c13]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub name: String,
    pub n_configs: usize,
    pub traces_per_config: usize,
    pub ranges: SamplingRanges,
    pub lattice: LatticeSpec,
    /// Template for grid, readout high level and ¹⁴N settings; `t2_star`,
    /// `f_base` and `pl_low` are overwritten per trace.
    pub ramsey: RamseyConfig,
    pub noise: NoiseModel,
    pub noise_on: bool,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            name: "corpus".into(),
            n_configs: 10,
            traces_per_config: 10,
            ranges: SamplingRanges::default(),
            lattice: LatticeSpec::default(),
            ramsey: RamseyConfig::default(),
            noise: NoiseModel::default(),
            noise_on: true,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_configs == 0 || self.traces_per_config == 0 {
            return Err(invalid("corpus needs at least one configuration and one trace per configuration"));
        }
        if self.n_configs > u32::MAX as usize {
            return Err(invalid("configuration ids must fit in u32"));
        }
        self.ranges.validate()?;
        self.lattice.validate()?;
        self.ramsey.grid.validate()?;
        if self.noise_on {
            self.noise.validate()?;
        }
        Ok(())
    }

    pub fn n_traces(&self) -> u64 {
        (self.n_configs * self.traces_per_config) as u64
    }
}

/// The stream that configuration `config` of a corpus seeded by `seed` draws
/// from.
pub fn config_rng(seed: u64, config: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(config);
    rng
}

/// Draws a bath with at most [`MAX_C13`] spins, redrawing from the same
/// stream when the cutoff sphere holds more.
pub fn draw_bath<R: Rng + ?Sized>(gen: &BathGenerator, rng: &mut R) -> NuclearBath {
    loop {
        let bath = gen.sample_with(rng);
        if bath.len() <= MAX_C13 {
            return bath;
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// In-memory output of one configuration.
#[derive(Debug, Clone)]
pub struct ConfigSamples {
    pub bath: NuclearBath,
    pub clean: Vec<Vec<f64>>,
    pub noisy: Option<Vec<Vec<f64>>>,
    pub labels: Vec<LabelRecord>,
}

/// Generates configuration `config` of `spec` without touching disk.
pub fn generate_config(spec: &CorpusSpec, gen: &BathGenerator, config: u32) -> Result<ConfigSamples> {
    let mut rng = config_rng(spec.seed, config as u64);
    let bath = draw_bath(gen, &mut rng);
    let couplings = bath.couplings();
    let hf = HyperfineSet::new(couplings.clone())?;
    let mut clean = Vec::with_capacity(spec.traces_per_config);
    let mut noisy = spec.noise_on.then(|| Vec::with_capacity(spec.traces_per_config));
    let mut labels = Vec::with_capacity(spec.traces_per_config);
    for _ in 0..spec.traces_per_config {
        let cfg = RamseyConfig {
            t2_star: draw(&mut rng, spec.ranges.t2_star),
            f_base: draw(&mut rng, spec.ranges.f_base),
            pl_low: draw(&mut rng, spec.ranges.pl_low),
            ..spec.ramsey
        };
        let trace = forward_reconstruct(&hf, &cfg)?;
        if let Some(noisy) = noisy.as_mut() {
            let mut v = trace.values.clone();
            synthesize_in_place(&mut v, &spec.noise, &mut rng);
            noisy.push(v);
        }
        labels.push(LabelRecord::new(config, &couplings, cfg.t2_star, cfg.pl_low, cfg.f_base)?);
        clean.push(trace.values);
    }
    Ok(ConfigSamples { bath, clean, noisy, labels })
}

struct Sink {
    file: BufWriter<File>,
    bytes: u64,
    channel: &'static str,
}

impl Sink {
    fn create(base: &Path, channel: &'static str) -> Result<Self> {
        Ok(Self {
            file: BufWriter::with_capacity(1 << 20, File::create(artifact_path(base, channel))?),
            bytes: 0,
            channel,
        })
    }

    fn write(&mut self, buf: &[u8]) -> Result<()> {
        self.file.write_all(buf)?;
        self.bytes += buf.len() as u64;
        Ok(())
    }

    fn finish(mut self) -> Result<PayloadEntry> {
        self.file.flush()?;
        Ok(PayloadEntry {
            channel: self.channel.to_string(),
            bytes: self.bytes,
        })
    }
}

/// Generates a full corpus at `base` (`<base>.manifest`, `.traces`,
/// `.noisy` when noise is on, `.labels`, `.baths`).
///
/// Parallelism comes from the ambient rayon pool and never changes the
/// output bytes.
pub fn generate_corpus(spec: &CorpusSpec, base: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let gen = BathGenerator::new(&spec.lattice)?;

    let mut traces = Sink::create(base, "traces")?;
    let mut noisy = if spec.noise_on { Some(Sink::create(base, "noisy")?) } else { None };
    let mut labels = Sink::create(base, "labels")?;
    let mut baths = Sink::create(base, "baths")?;

    let per_batch = (BATCH_TRACES / spec.traces_per_config).max(1);
    let mut start = 0usize;
    while start < spec.n_configs {
        let end = (start + per_batch).min(spec.n_configs);
        let encoded: Vec<Result<[Vec<u8>; 4]>> = (start..end)
            .into_par_iter()
            .map(|c| {
                let s = generate_config(spec, &gen, c as u32)?;
                let mut t = Vec::new();
                let mut n = Vec::new();
                let mut l = Vec::new();
                let mut b = Vec::new();
                for row in &s.clean {
                    io::push_f32(&mut t, row);
                }
                for row in s.noisy.iter().flatten() {
                    io::push_f32(&mut n, row);
                }
                for rec in &s.labels {
                    rec.encode(&mut l);
                }
                io::encode_bath_line(&BathRecord::from_bath(c as u32, &s.bath), &mut b)?;
                Ok([t, n, l, b])
            })
            .collect();
        for item in encoded {
            let [t, n, l, b] = item?;
            traces.write(&t)?;
            if let Some(sink) = noisy.as_mut() {
                sink.write(&n)?;
            }
            labels.write(&l)?;
            baths.write(&b)?;
        }
        start = end;
    }

    let mut m = DatasetManifest::new(ManifestKind::Corpus, &spec.name, spec.ramsey.grid, spec.seed);
    m.n_traces = spec.n_traces();
    m.n_configs = spec.n_configs as u64;
    m.traces_per_config = spec.traces_per_config as u64;
    m.lattice = Some(spec.lattice);
    m.nv = Some(*gen.nv());
    m.ramsey = Some(spec.ramsey);
    m.ranges = Some(spec.ranges);
    m.noise = spec.noise_on.then_some(spec.noise);
    m.payloads.push(traces.finish()?);
    if let Some(sink) = noisy {
        m.payloads.push(sink.finish()?);
    }
    m.payloads.push(labels.finish()?);
    m.payloads.push(baths.finish()?);
    io::write_manifest(base, &m)?;
    Ok(m)
}

/// A corpus read back into memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub clean: Vec<Vec<f32>>,
    pub noisy: Option<Vec<Vec<f32>>>,
    pub labels: Vec<LabelRecord>,
}

pub fn load_corpus(base: &Path) -> Result<Corpus> {
    let base = io::base_path(base);
    let manifest = read_manifest(&base)?;
    if manifest.kind != ManifestKind::Corpus {
        return Err(Error::Format(format!("expected a corpus manifest, found {:?}", manifest.kind)));
    }
    io::verify_payloads(&base, &manifest)?;
    let clean = read_channel(&base, &manifest, "traces")?;
    let noisy = if manifest.has("noisy") {
        Some(read_channel(&base, &manifest, "noisy")?)
    } else {
        None
    };
    let labels = read_labels(&base, &manifest)?;
    Ok(Corpus { manifest, clean, noisy, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseCorpusSpec {
    pub name: String,
    pub n_traces: usize,
    /// Constant PL(%) level of each trace, drawn uniformly.
    pub level_range: (f64, f64),
    pub grid: Grid,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for NoiseCorpusSpec {
    fn default() -> Self {
        Self {
            name: "noise".into(),
            n_traces: 1000,
            level_range: (75.0, 100.0),
            grid: Grid::default(),
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

/// One pure-noise trace and its uncertainty channel `u = √max(x, 0)`.
pub fn pure_noise_trace(spec: &NoiseCorpusSpec, index: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = config_rng(spec.seed, index);
    let level = draw(&mut rng, spec.level_range);
    let mut x = vec![level; spec.grid.n_points];
    synthesize_in_place(&mut x, &spec.noise, &mut rng);
    let u = x.iter().map(|v| v.max(0.0).sqrt()).collect();
    (x, u)
}

/// Writes `<base>.noisy` and `<base>.uncert` with their manifest.
pub fn generate_pure_noise(spec: &NoiseCorpusSpec, base: &Path) -> Result<DatasetManifest> {
    let (lo, hi) = spec.level_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(invalid(format!("level range [{lo}, {hi}] must be positive")));
    }
    spec.grid.validate()?;
    spec.noise.validate()?;
    let mut noisy = Sink::create(base, "noisy")?;
    let mut uncert = Sink::create(base, "uncert")?;
    let mut start = 0usize;
    while start < spec.n_traces {
        let end = (start + BATCH_TRACES).min(spec.n_traces);
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (start..end)
            .into_par_iter()
            .map(|i| pure_noise_trace(spec, i as u64))
            .collect();
        let mut nb = Vec::new();
        let mut ub = Vec::new();
        for (x, u) in &rows {
            io::push_f32(&mut nb, x);
            io::push_f32(&mut ub, u);
        }
        noisy.write(&nb)?;
        uncert.write(&ub)?;
        start = end;
    }
    let mut m = DatasetManifest::new(ManifestKind::NoiseCorpus, &spec.name, spec.grid, spec.seed);
    m.n_traces = spec.n_traces as u64;
    m.n_configs = spec.n_traces as u64;
    m.traces_per_config = 1;
    m.noise = Some(spec.noise);
    m.level_range = Some(spec.level_range);
    m.payloads.push(noisy.finish()?);
    m.payloads.push(uncert.finish()?);
    io::write_manifest(base, &m)?;
    Ok(m)
}

/// Assigns whole configurations to train or validation.
///
/// Configuration ids are shuffled with the manifest seed and the first
/// `round(fraction · n)` (kept within `1..n`) go to training. Both lists come
/// back sorted.
pub fn split(manifest: &DatasetManifest, fraction: f64) -> Result<SplitAssignment> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = manifest.n_configs;
    if n < 2 {
        return Err(invalid(format!("cannot split {n} configuration(s)")));
    }
    if n > u32::MAX as u64 {
        return Err(invalid("configuration ids must fit in u32"));
    }
    let mut ids: Vec<u32> = (0..n as u32).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(manifest.seed));
    let n_train = ((fraction * n as f64).round() as u64).clamp(1, n - 1) as usize;
    let mut train = ids[..n_train].to_vec();
    let mut validation = ids[n_train..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok(SplitAssignment {
        fraction,
        seed: manifest.seed,
        train,
        validation,
    })
}

/// Configuration owning trace `index`.
pub fn config_of_trace(manifest: &DatasetManifest, index: u64) -> u64 {
    index / manifest.traces_per_config.max(1)
}
