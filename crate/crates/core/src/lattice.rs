//! Diamond supercell enumeration, NV placement and stochastic ¹³C baths.
//!
//! A bath is built in four steps:
//!
//! 1. [`enumerate_supercell`] lays out `8 n³` carbon sites of an `n × n × n`
//!    conventional-cell supercell, recentered on the bounding-box center.
//! 2. [`place_nv`] turns the site nearest the origin into the vacancy, labels
//!    its nearest neighbour as the nitrogen and shifts the vacancy to the origin.
//! 3. [`eligible_sites`] drops the first coordination shell around the vacancy.
//! 4. [`dope_and_cut`] converts each eligible site to ¹³C with probability
//!    `p13` (subject to a box-wide cap), keeps dopants inside the cutoff sphere
//!    and assigns each one its secular dipolar coupling.
//!
//! [`BathGenerator`] caches steps 1–3 so that many seeds can be sampled cheaply.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = [f64; 3];

/// The eight diamond basis points of a conventional cell, in quarter-cell units.
pub const DIAMOND_BASIS: [[i32; 3]; 8] = [
    [0, 0, 0],
    [0, 2, 2],
    [2, 0, 2],
    [2, 2, 0],
    [1, 1, 1],
    [1, 3, 3],
    [3, 1, 3],
    [3, 3, 1],
];

/// Absolute tolerance (Å) used when comparing distances against the
/// first-shell radius.
pub const SHELL_TOLERANCE: f64 = 1e-6;

pub fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Generator parameters for one bath realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeSpec {
    /// Lattice constant, Å.
    pub a: f64,
    /// Conventional cells per axis.
    pub n_super: usize,
    /// Per-site ¹³C substitution probability.
    pub p13: f64,
    /// Maximum number of dopants generated in the whole box.
    pub dopant_cap: usize,
    /// Cutoff radius around the vacancy, Å.
    pub r_cut: f64,
    /// Dipolar prefactor, kHz·Å³.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            a: 3.57,
            n_super: 5,
            p13: 0.011,
            dopant_cap: 200,
            r_cut: 6.0,
            alpha: 1.99e4,
            seed: 0,
        }
    }
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(invalid(format!("lattice constant must be positive, got {}", self.a)));
        }
        if self.n_super < 1 {
            return Err(invalid("n_super must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p13) {
            return Err(invalid(format!("p13 must lie in [0, 1], got {}", self.p13)));
        }
        if !(self.r_cut > 0.0 && self.r_cut.is_finite()) {
            return Err(invalid(format!("r_cut must be positive, got {}", self.r_cut)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Nearest-neighbour distance `(√3/4) a`.
    pub fn r_nn(&self) -> f64 {
        nearest_neighbor_distance(self.a)
    }

    /// Side length of the recentered cubic box, `(a/4)(4n − 1)`.
    pub fn box_side(&self) -> f64 {
        self.a / 4.0 * (4 * self.n_super - 1) as f64
    }

    /// Characteristic coupling scale at the cutoff, `alpha / r_cut³` (kHz).
    pub fn boundary_scale(&self) -> f64 {
        self.alpha / self.r_cut.powi(3)
    }
}

pub fn nearest_neighbor_distance(a: f64) -> f64 {
    3f64.sqrt() / 4.0 * a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub position: Vec3,
}

impl Site {
    pub fn distance(&self) -> f64 {
        norm(&self.position)
    }
}

/// NV geometry after shifting the vacancy to the origin. The symmetry axis
/// is the crystal `ẑ` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvFrame {
    pub vacancy: Vec3,
    pub nitrogen: Vec3,
    pub axis: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C13Spin {
    pub position: Vec3,
    /// Parallel hyperfine coupling, kHz.
    pub a_par: f64,
}

impl C13Spin {
    pub fn distance(&self) -> f64 {
        norm(&self.position)
    }
}

/// Retained ¹³C spins around one NV, with the generator settings that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearBath {
    pub spec: LatticeSpec,
    pub nv: NvFrame,
    pub spins: Vec<C13Spin>,
    /// Dopants generated in the full box before the cutoff was applied.
    pub box_dopants: usize,
}

impl NuclearBath {
    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn couplings(&self) -> Vec<f64> {
        self.spins.iter().map(|s| s.a_par).collect()
    }
}

/// Enumerates `8 n³` diamond sites, recentered on the bounding-box center.
///
/// Sites are ordered by supercell index `(i, j, k)` (row-major) and then by
/// basis point, which fixes the tie-breaking order used downstream.
pub fn enumerate_supercell(spec: &LatticeSpec) -> Vec<Site> {
    let n = spec.n_super as i64;
    let quarter = spec.a / 4.0;
    // Integer coordinates span [0, 4n − 1]; the box center sits at (4n − 1)/2.
    let center = (4 * n - 1) as f64 / 2.0;
    let mut sites = Vec::with_capacity(8 * spec.n_super.pow(3));
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for p in DIAMOND_BASIS {
                    let q = [p[0] as i64 + 4 * i, p[1] as i64 + 4 * j, p[2] as i64 + 4 * k];
                    sites.push(Site {
                        position: [
                            quarter * (q[0] as f64 - center),
                            quarter * (q[1] as f64 - center),
                            quarter * (q[2] as f64 - center),
                        ],
                    });
                }
            }
        }
    }
    sites
}

fn argmin_by_distance(sites: &[Site], origin: &Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (idx, s) in sites.iter().enumerate() {
        let d = norm(&sub(&s.position, origin));
        // strict `<` keeps the lowest index on ties
        if d < best_d {
            best = idx;
            best_d = d;
        }
    }
    best
}

/// Places the NV center and returns the remaining sites in the vacancy frame.
pub fn place_nv(mut sites: Vec<Site>) -> Result<(NvFrame, Vec<Site>)> {
    if sites.len() < 2 {
        return Err(invalid(format!(
            "NV placement needs at least 2 sites, got {}",
            sites.len()
        )));
    }
    let v_idx = argmin_by_distance(&sites, &[0.0; 3]);
    let vacancy = sites.remove(v_idx).position;
    let n_idx = argmin_by_distance(&sites, &vacancy);
    let nitrogen = sites.remove(n_idx).position;
    for s in sites.iter_mut() {
        s.position = sub(&s.position, &vacancy);
    }
    let frame = NvFrame {
        vacancy: [0.0; 3],
        nitrogen: sub(&nitrogen, &vacancy),
        axis: [0.0, 0.0, 1.0],
    };
    Ok((frame, sites))
}

/// Whether a site at distance `r` from the vacancy lies in the excluded
/// first coordination shell. Sites sitting exactly at `r_nn` are part of the
/// shell and are excluded.
pub fn in_first_shell(r: f64, r_nn: f64) -> bool {
    r < r_nn + SHELL_TOLERANCE
}

/// Drops first-shell sites from a vacancy-centered site list.
pub fn eligible_sites(sites: &[Site], spec: &LatticeSpec) -> Vec<Site> {
    let r_nn = spec.r_nn();
    sites
        .iter()
        .filter(|s| !in_first_shell(s.distance(), r_nn))
        .copied()
        .collect()
}

/// Secular dipolar coupling `(alpha / r³)(3 z²/r² − 1)` in kHz for a nucleus
/// at `position` (Å) relative to an NV whose axis is `ẑ`.
pub fn dipolar_coupling(position: &Vec3, alpha: f64) -> Result<f64> {
    let r = norm(position);
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid("dipolar coupling needs a non-zero finite position"));
    }
    let cos2 = position[2] * position[2] / (r * r);
    Ok(alpha / (r * r * r) * (3.0 * cos2 - 1.0))
}

/// Bernoulli doping of the eligible sites in enumeration order, followed by
/// the spherical cutoff.
///
/// Once `dopant_cap` dopants exist no further sites are drawn.
pub fn dope_and_cut<R: Rng + ?Sized>(
    eligible: &[Site],
    nv: &NvFrame,
    spec: &LatticeSpec,
    rng: &mut R,
) -> NuclearBath {
    let mut dopants = Vec::new();
    for site in eligible {
        if dopants.len() >= spec.dopant_cap {
            break;
        }
        if rng.random::<f64>() < spec.p13 {
            dopants.push(*site);
        }
    }
    let box_dopants = dopants.len();
    let spins = dopants
        .into_iter()
        .filter(|s| s.distance() <= spec.r_cut)
        .map(|s| C13Spin {
            position: s.position,
            // eligible sites are never at the origin
            a_par: dipolar_coupling(&s.position, spec.alpha).unwrap_or(0.0),
        })
        .collect();
    NuclearBath {
        spec: *spec,
        nv: *nv,
        spins,
        box_dopants,
    }
}

/// Caches the deterministic part of bath generation (enumeration, NV
/// placement, first-shell exclusion) for a fixed geometry.
#[derive(Debug, Clone)]
pub struct BathGenerator {
    spec: LatticeSpec,
    nv: NvFrame,
    eligible: Vec<Site>,
}

impl BathGenerator {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let (nv, rest) = place_nv(enumerate_supercell(spec))?;
        let eligible = eligible_sites(&rest, spec);
        Ok(Self {
            spec: *spec,
            nv,
            eligible,
        })
    }

    pub fn nv(&self) -> &NvFrame {
        &self.nv
    }

    pub fn eligible(&self) -> &[Site] {
        &self.eligible
    }

    /// Bath for `seed`, using a ChaCha8 stream seeded from it.
    pub fn sample(&self, seed: u64) -> NuclearBath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = self.spec;
        spec.seed = seed;
        dope_and_cut(&self.eligible, &self.nv, &spec, &mut rng)
    }

    /// Bath drawn from a caller-supplied stream. The echoed spec keeps the
    /// generator's seed.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> NuclearBath {
        dope_and_cut(&self.eligible, &self.nv, &self.spec, rng)
    }
}

/// Full pipeline for one bath, seeded from `spec.seed`.
pub fn generate_bath(spec: &LatticeSpec) -> Result<NuclearBath> {
    Ok(BathGenerator::new(spec)?.sample(spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> LatticeSpec {
        LatticeSpec {
            n_super: n,
            ..LatticeSpec::default()
        }
    }

    #[test]
    fn counts_and_box_side() {
        assert_eq!(enumerate_supercell(&spec(1)).len(), 8);
        assert_eq!(enumerate_supercell(&spec(5)).len(), 1000);
        assert!((spec(5).box_side() - 16.9575).abs() < 1e-12);
    }

    #[test]
    fn pairwise_distance_at_least_nn() {
        let s = spec(2);
        let sites = enumerate_supercell(&s);
        let r_nn = s.r_nn();
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                let d = norm(&sub(&sites[i].position, &sites[j].position));
                assert!(d >= r_nn - 1e-9, "sites {i},{j} at {d}");
            }
        }
    }

    #[test]
    fn nitrogen_at_nn_distance() {
        let s = spec(5);
        let (nv, rest) = place_nv(enumerate_supercell(&s)).unwrap();
        assert_eq!(rest.len(), 998);
        assert_eq!(nv.vacancy, [0.0; 3]);
        let d = norm(&nv.nitrogen);
        assert!((d - 1.5459).abs() < 5e-5, "{d}");
        assert!((d - s.r_nn()).abs() < 1e-6);
    }

    #[test]
    fn place_nv_needs_two_sites() {
        let one = vec![Site { position: [0.0; 3] }];
        assert!(matches!(place_nv(one), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn site_on_origin_becomes_vacancy() {
        let sites = vec![
            Site { position: [3.0, 0.0, 0.0] },
            Site { position: [0.0, 0.0, 0.0] },
            Site { position: [0.0, 1.0, 0.0] },
        ];
        let (nv, rest) = place_nv(sites).unwrap();
        assert_eq!(nv.nitrogen, [0.0, 1.0, 0.0]);
        assert_eq!(rest, vec![Site { position: [3.0, 0.0, 0.0] }]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let sites = vec![
            Site { position: [1.0, 0.0, 0.0] },
            Site { position: [-1.0, 0.0, 0.0] },
            Site { position: [0.0, 5.0, 0.0] },
        ];
        let (nv, rest) = place_nv(sites).unwrap();
        // vacancy = index 0; nitrogen = (-1,0,0) shifted by (-1,0,0)
        assert_eq!(nv.nitrogen, [-2.0, 0.0, 0.0]);
        assert_eq!(rest[0].position, [-1.0, 5.0, 0.0]);
    }

    #[test]
    fn first_shell_predicate() {
        let r_nn = nearest_neighbor_distance(3.57);
        assert!(in_first_shell(1.0, r_nn));
        assert!(in_first_shell(r_nn, r_nn));
        assert!(!in_first_shell(3.0, r_nn));
    }

    #[test]
    fn eligible_removes_first_shell() {
        let s = spec(5);
        let (_, rest) = place_nv(enumerate_supercell(&s)).unwrap();
        let el = eligible_sites(&rest, &s);
        // the vacancy has four neighbours; the nitrogen is one of them
        assert_eq!(rest.len() - el.len(), 3);
        assert!(el.iter().all(|x| x.distance() > s.r_nn()));
    }

    #[test]
    fn coupling_examples() {
        let c = dipolar_coupling(&[0.0, 0.0, 3.0], 1.99e4).unwrap();
        assert!((c - 2.0 * 1.99e4 / 27.0).abs() < 1e-9);
        assert!((c - 1474.07).abs() < 0.01);
        // magic angle
        let r = 4.2;
        let ct = 1.0 / 3f64.sqrt();
        let st = (1.0 - ct * ct).sqrt();
        let p = [r * st, 0.0, r * ct];
        assert!(dipolar_coupling(&p, 1.99e4).unwrap().abs() < 1e-10);
        assert!(dipolar_coupling(&[0.0; 3], 1.99e4).is_err());
        assert!((spec(5).boundary_scale() - 92.13).abs() < 0.01);
    }

    #[test]
    fn degenerate_doping() {
        let mut s = spec(5);
        s.p13 = 0.0;
        assert!(generate_bath(&s).unwrap().is_empty());
        s.p13 = 1.0;
        s.dopant_cap = 3;
        let b = generate_bath(&s).unwrap();
        assert_eq!(b.box_dopants, 3);
    }

    #[test]
    fn invalid_specs_rejected() {
        for bad in [
            LatticeSpec { a: 0.0, ..spec(5) },
            LatticeSpec { n_super: 0, ..spec(5) },
            LatticeSpec { p13: 1.5, ..spec(5) },
            LatticeSpec { r_cut: -1.0, ..spec(5) },
            LatticeSpec { alpha: 0.0, ..spec(5) },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
