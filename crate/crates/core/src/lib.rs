//! Synthetic NV-center Ramsey traces from explicit ¹³C baths.
//!
//! The pipeline runs bath → clean trace → noisy trace → labels:
//!
//! - [`lattice`] builds a diamond supercell, places the NV, dopes ¹³C and
//!   computes parallel hyperfine couplings;
//! - [`ramsey`] turns couplings and a dephasing time into a PL(%) trace;
//! - [`noise`] calibrates and samples the heteroscedastic noise model;
//! - [`sweeps`] averages count records over sweep subsets with delta-method
//!   uncertainties;
//! - [`analysis`] holds PCA and reconstruction metrics;
//! - [`losses`] and [`features`] are closed-form references for training
//!   objectives, token layout and attention;
//! - [`dataset`] streams corpora to disk.
//!
//! ```
//! use nvramsey::ramsey::{forward_reconstruct, HyperfineSet, RamseyConfig};
//!
//! let hf = HyperfineSet::new(vec![22.3]).unwrap();
//! let cfg = RamseyConfig { t2_star: 1.7585, ..Default::default() };
//! let trace = forward_reconstruct(&hf, &cfg).unwrap();
//! assert_eq!(trace.len(), 200);
//! assert!((trace.values[0] - 100.0).abs() < 1e-12);
//! ```

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod features;
pub mod lattice;
pub mod losses;
pub mod noise;
pub mod ramsey;
pub mod spectrum;
pub mod stats;
pub mod sweeps;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/ramsey.md")]
    mod ramsey {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
