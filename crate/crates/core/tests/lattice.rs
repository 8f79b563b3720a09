use nvramsey::lattice::*;
use proptest::prelude::*;

/// Diamond sites around a lattice site at the origin, counted by brute force
/// over quarter-cell integer coordinates: FCC points (all even, sum ≡ 0 mod 4)
/// plus the same shifted by (1, 1, 1).
fn diamond_sites_within(a: f64, r_max: f64) -> Vec<[f64; 3]> {
    let q = a / 4.0;
    let lim = (r_max / q).ceil() as i64 + 2;
    let mut out = Vec::new();
    for x in -lim..=lim {
        for y in -lim..=lim {
            for z in -lim..=lim {
                let fcc = x % 2 == 0 && y % 2 == 0 && z % 2 == 0 && (x + y + z).rem_euclid(4) == 0;
                let (sx, sy, sz) = (x - 1, y - 1, z - 1);
                let shifted =
                    sx % 2 == 0 && sy % 2 == 0 && sz % 2 == 0 && (sx + sy + sz).rem_euclid(4) == 0;
                if fcc || shifted {
                    let p = [x as f64 * q, y as f64 * q, z as f64 * q];
                    let r = norm(&p);
                    if r > 0.0 && r <= r_max + 1e-9 {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn enumeration_count_and_symmetry() {
    for n in 1..=8 {
        let spec = LatticeSpec { n_super: n, ..Default::default() };
        let sites = enumerate_supercell(&spec);
        assert_eq!(sites.len(), 8 * n * n * n);
        for axis in 0..3 {
            let max = sites.iter().map(|s| s.position[axis]).fold(f64::MIN, f64::max);
            let min = sites.iter().map(|s| s.position[axis]).fold(f64::MAX, f64::min);
            assert!((max + min).abs() < 1e-9, "n={n} axis {axis}");
        }
    }
}

#[test]
fn geometry_constants() {
    let spec = LatticeSpec::default();
    assert!((spec.box_side() - 16.9575).abs() < 1e-9);
    assert!((spec.r_nn() - 3f64.sqrt() / 4.0 * 3.57).abs() < 1e-12);
    assert!((spec.boundary_scale() - 92.13).abs() < 0.01);
}

#[test]
fn eligible_sphere_matches_brute_force() {
    let spec = LatticeSpec::default();
    let gen = BathGenerator::new(&spec).unwrap();
    let in_sphere = gen
        .eligible()
        .iter()
        .filter(|s| s.distance() <= spec.r_cut)
        .count();
    // every site within the sphere except the four first neighbours (one is
    // the nitrogen, three are excluded)
    let oracle = diamond_sites_within(spec.a, spec.r_cut).len() - 4;
    assert_eq!(in_sphere, oracle);
    // nitrogen sits at the nearest-neighbour distance
    assert!((norm(&gen.nv().nitrogen) - spec.r_nn()).abs() < 1e-9);
}

#[test]
fn dipolar_hand_values() {
    assert!((dipolar_coupling(&[0.0, 0.0, 3.0], 1.99e4).unwrap() - 1474.074).abs() < 1e-3);
    let c = 1.0 / 3f64.sqrt();
    let magic = [(1.0 - c * c).sqrt() * 4.0, 0.0, c * 4.0];
    assert!(dipolar_coupling(&magic, 1.99e4).unwrap().abs() < 1e-9);
    assert!(dipolar_coupling(&[0.0; 3], 1.99e4).is_err());
}

#[test]
fn doping_limits() {
    let gen_spec = LatticeSpec { p13: 0.0, ..Default::default() };
    assert!(generate_bath(&gen_spec).unwrap().is_empty());
    let full = LatticeSpec { p13: 1.0, dopant_cap: 3, ..Default::default() };
    assert_eq!(generate_bath(&full).unwrap().box_dopants, 3);
}

#[test]
fn same_seed_same_bath() {
    let gen = BathGenerator::new(&LatticeSpec::default()).unwrap();
    for seed in 0..50 {
        assert_eq!(gen.sample(seed), gen.sample(seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn retained_spins_obey_geometry_and_bound(seed in any::<u64>()) {
        let spec = LatticeSpec::default();
        let gen = BathGenerator::new(&spec).unwrap();
        let bath = gen.sample(seed);
        for s in &bath.spins {
            let r = s.distance();
            prop_assert!(r >= spec.r_nn() - 1e-9 && r <= spec.r_cut + 1e-9);
            prop_assert!(s.a_par.abs() <= 2.0 * spec.alpha / r.powi(3) + 1e-9);
            prop_assert!(s.a_par.abs() <= 2.0 * spec.boundary_scale() * (spec.r_cut / r).powi(3) + 1e-9);
        }
    }

    #[test]
    fn coupling_bound_any_direction(theta in 0.0..std::f64::consts::PI, phi in 0.0..6.3f64, r in 1.0..8.0f64) {
        let p = [r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin(), r * theta.cos()];
        let c = dipolar_coupling(&p, 1.99e4).unwrap();
        prop_assert!(c.abs() <= 2.0 * 1.99e4 / r.powi(3) * (1.0 + 1e-12));
    }
}
