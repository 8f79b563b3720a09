//! `nvramsey` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "nvramsey", version, about = "NV-center Ramsey trace synthesis and analysis")]
pub struct Cli {
    /// Seed for every randomized step. Required by randomized subcommands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON file with generator settings for the subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output style on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Manifest)]
    pub format: Format,

    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// JSON summaries.
    Manifest,
    /// Whitespace-separated numeric columns with a `#` header.
    Columns,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate 13C baths around an NV.
    LatticeGen(LatticeArgs),
    /// Simulate a trace from a freshly generated bath.
    Simulate(SimulateArgs),
    /// Forward-model a trace from given couplings.
    Reconstruct(ReconstructArgs),
    /// Fit sigma(y) and sigma_dc from repeated sweeps and a reference trace.
    CalibrateNoise(CalibrateArgs),
    /// Add calibrated noise to clean traces.
    Synth(SynthArgs),
    /// K-sweep resampling with delta-method uncertainties.
    Resample(ResampleArgs),
    /// Principal components of a trace ensemble.
    Pca(PcaArgs),
    /// RMSE, chi2 and FFT-RMSE between two traces.
    Eval(EvalArgs),
    /// Evaluate the closed-form loss examples.
    LossCheck,
    /// Dump transformer token sequences.
    Tokens(TokensArgs),
    /// Generate a labeled corpus of clean and noisy traces.
    GenCorpus(CorpusArgs),
    /// Generate a pure-noise corpus with uncertainty channel.
    GenNoiseCorpus(NoiseCorpusArgs),
}

#[derive(Args, Debug, Clone)]
pub struct LatticeFlags {
    /// Lattice constant, angstrom.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub n_super: Option<usize>,
    #[arg(long)]
    pub p13: Option<f64>,
    #[arg(long)]
    pub dopant_cap: Option<usize>,
    /// Cutoff radius, angstrom.
    #[arg(long)]
    pub r_cut: Option<f64>,
    /// Dipolar prefactor, kHz angstrom^3.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct GridFlags {
    #[arg(long)]
    pub n_points: Option<usize>,
    /// µs.
    #[arg(long)]
    pub t_start: Option<f64>,
    /// µs.
    #[arg(long)]
    pub t_end: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct RamseyFlags {
    /// Dephasing time T2*, µs.
    #[arg(long)]
    pub t2: Option<f64>,
    /// Detuning f_base, MHz.
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub pl_low: Option<f64>,
    #[arg(long)]
    pub pl_high: Option<f64>,
    /// 14N parallel coupling, kHz; enables the nitrogen triplet.
    #[arg(long)]
    pub n14: Option<f64>,
    #[command(flatten)]
    pub grid: GridFlags,
}

#[derive(Args, Debug)]
pub struct LatticeArgs {
    #[arg(long, default_value_t = 1)]
    pub n_baths: usize,
    #[command(flatten)]
    pub lattice: LatticeFlags,
    /// Output base path (writes `<out>.manifest`, `<out>.baths`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub ramsey: RamseyFlags,
    #[command(flatten)]
    pub lattice: LatticeFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Number of 13C couplings.
    #[arg(long)]
    pub n: usize,
    /// Comma-separated parallel couplings, kHz.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub couplings: Vec<f64>,
    #[command(flatten)]
    pub ramsey: RamseyFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Trace set holding the repeated sweeps (uses `noisy`, else `traces`).
    #[arg(long)]
    pub sweeps: PathBuf,
    /// Trace set whose first clean row is the reference.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = nvramsey::noise::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.1)]
    pub floor: f64,
    #[arg(long, default_value_t = nvramsey::noise::MIN_DC_SWEEPS)]
    pub min_sweeps: usize,
    /// Histogram bins for the residual columns.
    #[arg(long, default_value_t = 60)]
    pub hist_bins: usize,
    /// Write the fitted model here as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Clean trace set.
    #[arg(long)]
    pub input: PathBuf,
    /// Noisy realizations per clean trace.
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ResampleArgs {
    /// Sweep file base path.
    #[arg(long)]
    pub sweeps: PathBuf,
    /// Subset sizes; defaults to the standard list, limited to the sweep count.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = nvramsey::sweeps::DEFAULT_N_REP)]
    pub n_rep: usize,
    /// Output base; each K writes `<out>.k<K>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PcaArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Channel to analyse (default: `traces`).
    #[arg(long)]
    pub channel: Option<String>,
    /// Leading modes kept in the report.
    #[arg(long, default_value_t = nvramsey::analysis::DEFAULT_REPORT_MODES)]
    pub modes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub pred_index: usize,
    #[arg(long, default_value_t = 0)]
    pub ref_index: usize,
    /// Channel of the reference set (default: `noisy` if present).
    #[arg(long)]
    pub ref_channel: Option<String>,
    /// Take per-point uncertainties from this set's `uncert` channel.
    #[arg(long)]
    pub sigmas: Option<PathBuf>,
    /// Constant per-point uncertainty.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Degrees of freedom (default: trace length).
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TokensArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub channel: Option<String>,
    /// Only this row; all rows when omitted.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub n_meta: usize,
    /// PL(%) metadata; defaults to the label's pl_low.
    #[arg(long)]
    pub pl: Option<f64>,
    /// T2* metadata, µs; defaults to the label.
    #[arg(long)]
    pub t2: Option<f64>,
    /// f metadata, MHz; defaults to the label.
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long)]
    pub n_configs: Option<usize>,
    #[arg(long)]
    pub traces_per_config: Option<usize>,
    /// Write clean traces and labels only.
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub t2_range: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub f_range: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub pl_low_range: Option<Vec<f64>>,
    /// Also record a train/validation split with this training fraction.
    #[arg(long)]
    pub split: Option<f64>,
    #[command(flatten)]
    pub lattice: LatticeFlags,
    #[command(flatten)]
    pub grid: GridFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct NoiseCorpusArgs {
    #[arg(long)]
    pub n_traces: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub level_range: Option<Vec<f64>>,
    #[command(flatten)]
    pub grid: GridFlags,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<nvramsey::Error> for CliError {
    fn from(e: nvramsey::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
