//! On-disk layout.
//!
//! Every artifact is a pretty-printed JSON manifest (`<name>.manifest`) next
//! to headerless binary payloads. Float payloads are little-endian `f32`,
//! row-major, one row per trace. Labels are fixed-width little-endian records
//! of [`LABEL_RECORD_BYTES`] bytes. Baths are JSON lines, one per
//! configuration.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{C13Spin, LatticeSpec, NuclearBath, NvFrame};
use crate::noise::NoiseModel;
use crate::ramsey::{Grid, RamseyConfig};
use crate::sweeps::SweepRecord;

use super::{LabelRecord, SamplingRanges, N_SLOTS};

pub const FORMAT_VERSION: u32 = 1;

/// `config_id u32, n_c13 u32, t2_star f64, pl_low f64, f_base f64,
/// couplings 10 × f64, mask 10 × u8`.
pub const LABEL_RECORD_BYTES: usize = 4 + 4 + 3 * 8 + N_SLOTS * 8 + N_SLOTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestKind {
    Corpus,
    NoiseCorpus,
    Traces,
    Baths,
    Sweeps,
    Tokens,
}

/// One binary payload listed by a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadEntry {
    /// File extension without the dot, e.g. `noisy`.
    pub channel: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fraction: f64,
    pub seed: u64,
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub kind: ManifestKind,
    pub name: String,
    /// Rows in every float payload.
    pub n_traces: u64,
    /// Values per row.
    pub row_len: usize,
    pub grid: Grid,
    pub n_configs: u64,
    pub traces_per_config: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nv: Option<NvFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramsey: Option<RamseyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<SamplingRanges>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitAssignment>,
    /// Free-form per-artifact parameters (e.g. the couplings of a
    /// reconstruction).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
    pub payloads: Vec<PayloadEntry>,
}

impl DatasetManifest {
    pub fn new(kind: ManifestKind, name: &str, grid: Grid, seed: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            kind,
            name: name.to_string(),
            n_traces: 0,
            row_len: grid.n_points,
            grid,
            n_configs: 0,
            traces_per_config: 0,
            seed,
            lattice: None,
            nv: None,
            ramsey: None,
            ranges: None,
            noise: None,
            level_range: None,
            split: None,
            params: serde_json::Value::Null,
            payloads: Vec::new(),
        }
    }

    pub fn payload(&self, channel: &str) -> Option<&PayloadEntry> {
        self.payloads.iter().find(|p| p.channel == channel)
    }

    pub fn has(&self, channel: &str) -> bool {
        self.payload(channel).is_some()
    }

    /// Bytes a float channel must hold.
    pub fn float_bytes(&self) -> u64 {
        self.n_traces * self.row_len as u64 * 4
    }
}

/// `<dir>/<name>.<channel>`.
pub fn artifact_path(base: &Path, channel: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(channel);
    PathBuf::from(s)
}

/// Strips a trailing `.manifest` so either form may be passed around.
pub fn base_path(path: &Path) -> PathBuf {
    match path.extension() {
        Some(ext) if ext == "manifest" => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

pub fn write_manifest(base: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(artifact_path(base, "manifest"), text)?;
    Ok(())
}

pub fn read_manifest(base: &Path) -> Result<DatasetManifest> {
    let base = base_path(base);
    let text = fs::read_to_string(artifact_path(&base, "manifest"))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

/// Checks every listed payload against the manifest's counts and the file
/// system.
pub fn verify_payloads(base: &Path, manifest: &DatasetManifest) -> Result<()> {
    let base = base_path(base);
    for p in &manifest.payloads {
        let expect = match p.channel.as_str() {
            "traces" | "noisy" | "uncert" | "tokens" => Some(manifest.float_bytes()),
            "labels" => Some(manifest.n_traces * LABEL_RECORD_BYTES as u64),
            _ => None,
        };
        if let Some(e) = expect {
            if e != p.bytes {
                return Err(Error::Format(format!(
                    "{}: manifest lists {} bytes, counts imply {e}",
                    p.channel, p.bytes
                )));
            }
        }
        let on_disk = fs::metadata(artifact_path(&base, &p.channel))?.len();
        if on_disk != p.bytes {
            return Err(Error::Format(format!(
                "{}: file has {on_disk} bytes, manifest lists {}",
                p.channel, p.bytes
            )));
        }
    }
    Ok(())
}

pub fn push_f32(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads a float channel as rows of `row_len`.
pub fn read_rows(path: &Path, row_len: usize) -> Result<Vec<Vec<f32>>> {
    let flat = decode_f32(&fs::read(path)?)?;
    if row_len == 0 || flat.len() % row_len != 0 {
        return Err(Error::Format(format!(
            "{}: {} values do not form rows of {row_len}",
            path.display(),
            flat.len()
        )));
    }
    Ok(flat.chunks_exact(row_len).map(<[f32]>::to_vec).collect())
}

/// Reads one channel of a manifest-described artifact, with size checks.
pub fn read_channel(base: &Path, manifest: &DatasetManifest, channel: &str) -> Result<Vec<Vec<f32>>> {
    let base = base_path(base);
    let entry = manifest
        .payload(channel)
        .ok_or_else(|| Error::Format(format!("manifest lists no `{channel}` payload")))?;
    let rows = read_rows(&artifact_path(&base, channel), manifest.row_len)?;
    if rows.len() as u64 != manifest.n_traces || entry.bytes != manifest.float_bytes() {
        return Err(Error::Format(format!(
            "{channel}: {} rows, manifest lists {}",
            rows.len(),
            manifest.n_traces
        )));
    }
    Ok(rows)
}

/// Writes rows to `<base>.<channel>` and returns the payload entry.
pub fn write_rows(base: &Path, channel: &str, rows: &[Vec<f64>]) -> Result<PayloadEntry> {
    let mut buf = Vec::new();
    for r in rows {
        push_f32(&mut buf, r);
    }
    fs::write(artifact_path(base, channel), &buf)?;
    Ok(PayloadEntry {
        channel: channel.to_string(),
        bytes: buf.len() as u64,
    })
}

impl LabelRecord {
    pub fn encode(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.config_id.to_le_bytes());
        buf.extend_from_slice(&(self.n_c13 as u32).to_le_bytes());
        for v in [self.t2_star, self.pl_low, self.f_base] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.couplings {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.mask);
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() != LABEL_RECORD_BYTES {
            return Err(Error::Format(format!("label record of {} bytes", b.len())));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let mut couplings = [0.0; N_SLOTS];
        for (i, c) in couplings.iter_mut().enumerate() {
            *c = f64_at(32 + 8 * i);
        }
        let mut mask = [0u8; N_SLOTS];
        mask.copy_from_slice(&b[32 + 8 * N_SLOTS..]);
        Ok(Self {
            config_id: u32_at(0),
            n_c13: u32_at(4) as usize,
            t2_star: f64_at(8),
            pl_low: f64_at(16),
            f_base: f64_at(24),
            couplings,
            mask,
        })
    }
}

pub fn read_labels(base: &Path, manifest: &DatasetManifest) -> Result<Vec<LabelRecord>> {
    let base = base_path(base);
    let bytes = fs::read(artifact_path(&base, "labels"))?;
    if bytes.len() as u64 != manifest.n_traces * LABEL_RECORD_BYTES as u64 {
        return Err(Error::Format(format!(
            "labels: {} bytes for {} records",
            bytes.len(),
            manifest.n_traces
        )));
    }
    bytes.chunks_exact(LABEL_RECORD_BYTES).map(LabelRecord::decode).collect()
}

/// One retained bath, as stored in `<name>.baths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathRecord {
    pub config_id: u32,
    pub box_dopants: usize,
    pub spins: Vec<C13Spin>,
}

impl BathRecord {
    pub fn from_bath(config_id: u32, bath: &NuclearBath) -> Self {
        Self {
            config_id,
            box_dopants: bath.box_dopants,
            spins: bath.spins.clone(),
        }
    }
}

pub fn encode_bath_line(rec: &BathRecord, buf: &mut Vec<u8>) -> Result<()> {
    serde_json::to_writer(&mut *buf, rec)?;
    buf.push(b'\n');
    Ok(())
}

pub fn read_baths(base: &Path) -> Result<Vec<BathRecord>> {
    let f = File::open(artifact_path(&base_path(base), "baths"))?;
    BufReader::new(f)
        .lines()
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Stored sweeps: for each sweep, `S` then `N` then (optionally) `PL`
/// blocks of `row_len` f32 values.
pub fn write_sweeps(base: &Path, grid: Grid, records: &[SweepRecord], name: &str) -> Result<DatasetManifest> {
    let with_pl = records.iter().all(|r| r.pl.is_some()) && !records.is_empty();
    let mut w = BufWriter::new(File::create(artifact_path(base, "sweeps"))?);
    let mut buf = Vec::new();
    for r in records {
        r.validate()?;
        if r.len() != grid.n_points {
            return Err(Error::InvalidInput(format!(
                "sweep {} has {} points, grid has {}",
                r.sweep_id,
                r.len(),
                grid.n_points
            )));
        }
        buf.clear();
        push_f32(&mut buf, &r.s_counts);
        push_f32(&mut buf, &r.n_counts);
        if with_pl {
            push_f32(&mut buf, r.pl.as_ref().unwrap());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    let blocks = if with_pl { 3 } else { 2 };
    let mut m = DatasetManifest::new(ManifestKind::Sweeps, name, grid, 0);
    m.n_traces = records.len() as u64;
    m.params = serde_json::json!({ "has_pl": with_pl, "sweep_ids": records.iter().map(|r| r.sweep_id).collect::<Vec<_>>() });
    m.payloads.push(PayloadEntry {
        channel: "sweeps".into(),
        bytes: records.len() as u64 * blocks * grid.n_points as u64 * 4,
    });
    write_manifest(base, &m)?;
    Ok(m)
}

pub fn read_sweeps(base: &Path) -> Result<(DatasetManifest, Vec<SweepRecord>)> {
    let base = base_path(base);
    let m = read_manifest(&base)?;
    if m.kind != ManifestKind::Sweeps {
        return Err(Error::Format(format!("expected a sweeps manifest, found {:?}", m.kind)));
    }
    let has_pl = m.params.get("has_pl").and_then(|v| v.as_bool()).unwrap_or(false);
    let ids: Vec<u32> = m
        .params
        .get("sweep_ids")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_else(|| (0..m.n_traces as u32).collect());
    let blocks = if has_pl { 3 } else { 2 };
    let l = m.row_len;
    let mut bytes = Vec::new();
    File::open(artifact_path(&base, "sweeps"))?.read_to_end(&mut bytes)?;
    let expect = m.n_traces as usize * blocks * l * 4;
    if bytes.len() != expect || ids.len() as u64 != m.n_traces {
        return Err(Error::Format(format!(
            "sweeps: {} bytes, manifest implies {expect}",
            bytes.len()
        )));
    }
    let flat = decode_f32(&bytes)?;
    let widen = |s: &[f32]| s.iter().map(|v| *v as f64).collect::<Vec<_>>();
    let records = flat
        .chunks_exact(blocks * l)
        .zip(ids)
        .map(|(c, id)| {
            let mut r = SweepRecord::new(id, widen(&c[..l]), widen(&c[l..2 * l]))?;
            if has_pl {
                r.pl = Some(widen(&c[2 * l..]));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, records))
}

/// Writes a plain trace set (clean channel only) with its manifest.
pub fn write_trace_set(
    base: &Path,
    name: &str,
    grid: Grid,
    rows: &[Vec<f64>],
    seed: u64,
    params: serde_json::Value,
) -> Result<DatasetManifest> {
    if let Some(r) = rows.iter().find(|r| r.len() != grid.n_points) {
        return Err(Error::InvalidInput(format!("row of {} values on a {}-point grid", r.len(), grid.n_points)));
    }
    let mut m = DatasetManifest::new(ManifestKind::Traces, name, grid, seed);
    m.n_traces = rows.len() as u64;
    m.n_configs = rows.len() as u64;
    m.traces_per_config = 1;
    m.params = params;
    m.payloads.push(write_rows(base, "traces", rows)?);
    write_manifest(base, &m)?;
    Ok(m)
}
