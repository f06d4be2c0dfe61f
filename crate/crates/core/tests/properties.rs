mod common;

use std::f64::consts::PI;

use closed_geodesics::exec::Executor;
use closed_geodesics::geodesic::{connect, distance, exp_map};
use closed_geodesics::loops::{build_sweepout, latitude_map, loop_distance, resample, GeodesicLoop};
use closed_geodesics::manifold::Domain;
use closed_geodesics::orbifold::{find_closed_geodesic_via_reduction, DevelopableOrbifold, ReductionStatus};
use closed_geodesics::shortening::birkhoff_step;
use closed_geodesics::symmetry::{
    fixed_set, isotropy, normalizer, orientation_subgroup, renormalize, verify_isometry, AffineIsometry, Ambient,
    IsometryGroup,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn which_of(i: usize) -> Which {
    ALL[i % 4]
}

fn rebuilt(lp: &GeodesicLoop, g: &AffineIsometry) -> GeodesicLoop {
    let vs = lp.vertices().iter().map(|v| g.apply(v)).collect();
    GeodesicLoop::new(lp.chart(), vs, None).unwrap()
}

/// Closure under composition and inversion, checked on the matrices directly.
fn closed_under_group_ops(elements: &[AffineIsometry]) -> bool {
    let has = |a: &DMatrix<f64>, b: &DVector<f64>| {
        elements.iter().any(|g| (g.linear() - a).amax() <= 1e-9 && (g.offset() - b).amax() <= 1e-9)
    };
    elements.iter().all(|x| {
        let inv_a = x.linear().transpose();
        let inv_b = -(&inv_a * x.offset());
        has(&inv_a, &inv_b)
            && elements.iter().all(|y| has(&(x.linear() * y.linear()), &(x.linear() * y.offset() + x.offset())))
    })
}

/// Signed permutation matrices of size 3 from an index in `0..48`.
fn signed_permutation(code: usize) -> DMatrix<f64> {
    let perms = [[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]];
    let p = perms[code % 6];
    let signs = code / 6;
    DMatrix::from_fn(3, 3, |i, j| if p[j] == i { if signs >> j & 1 == 1 { -1.0 } else { 1.0 } } else { 0.0 })
}

fn block_rotation(n: usize, angles: &[f64]) -> DMatrix<f64> {
    let mut a = DMatrix::identity(n, n);
    for (b, &t) in angles.iter().enumerate() {
        let (s, c) = t.sin_cos();
        let i = 2 * b;
        a[(i, i)] = c;
        a[(i, i + 1)] = -s;
        a[(i + 1, i)] = s;
        a[(i + 1, i + 1)] = c;
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn shortening_is_monotone_and_stays_close(seed in any::<u64>(), w in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_loop(which_of(w), &mut rng);
        let d = birkhoff_step(&c).unwrap();
        prop_assert!(d.energy() <= c.energy() + 1e-12 * c.energy().max(1.0));
        prop_assert!(d.length() <= c.length() + 1e-12 * c.length().max(1.0));
        let bound = 2.0 * (2.0 * c.energy() / c.m() as f64).sqrt();
        prop_assert!(loop_distance(&c, &d).unwrap() <= bound + 1e-12);
    }

    #[test]
    fn shortening_commutes_with_isometries(seed in any::<u64>(), w in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let which = which_of(w);
        let c = random_loop(which, &mut rng);
        let g = random_isometry(which, &mut rng);
        prop_assert!(verify_isometry(c.chart(), &g, 20, 1e-10, seed).passed);
        let left = birkhoff_step(&c.transformed(&g)).unwrap();
        let right = birkhoff_step(&c).unwrap().transformed(&g);
        prop_assert!(vertex_gap(&left, &right) <= 1e-10);
    }

    #[test]
    fn energy_and_length_are_isometry_invariant(seed in any::<u64>(), w in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let which = which_of(w);
        let c = random_loop(which, &mut rng);
        let g = random_isometry(which, &mut rng);
        let moved = rebuilt(&c, &g);
        prop_assert!((moved.energy() - c.energy()).abs() <= 1e-12 * c.energy().max(1.0));
        prop_assert!((moved.length() - c.length()).abs() <= 1e-12 * c.length().max(1.0));
    }

    #[test]
    fn loop_energy_identities(seed in any::<u64>(), w in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_loop(which_of(w), &mut rng);
        prop_assert!(c.length().powi(2) <= 2.0 * c.energy() * (1.0 + 1e-10));
        let quad = c.energy_by_quadrature().unwrap();
        prop_assert!((quad - c.energy()).abs() <= 1e-8 * c.energy());
    }

    #[test]
    fn resampling_a_loop_reproduces_it(seed in any::<u64>(), w in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_loop(which_of(w), &mut rng);
        let again = resample(|t| c.point_at(t), c.chart(), c.m(), None).unwrap();
        prop_assert!(vertex_gap(&c, &again) <= 1e-10);
    }

    #[test]
    fn exp_log_roundtrip_with_constant_speed(seed in any::<u64>(), w in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let which = which_of(w);
        let c = chart(which);
        let p = random_point(which, &mut rng);
        let v = random_velocity(&c, &p, c.injectivity_radius() / 2.0, &mut rng);
        let seg = exp_map(&c, &p, &v, None).unwrap();
        prop_assert!(seg.speed_drift().unwrap() <= 1e-8);
        let back = connect(&c, &p, &seg.end()).unwrap();
        prop_assert!((back.initial_velocity() - &v).amax() <= 1e-8);
        let l = seg.length();
        let e = seg.energy_by_quadrature().unwrap();
        prop_assert!((e - l * l / 2.0).abs() <= 1e-10 * e);
    }

    #[test]
    fn triangle_inequality_on_nearby_triples(seed in any::<u64>(), w in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let which = which_of(w);
        let c = chart(which);
        let p = random_point(which, &mut rng);
        let r = c.injectivity_radius() / 3.0;
        let q = exp_map(&c, &p, &random_velocity(&c, &p, r, &mut rng), None).unwrap().end();
        let s = exp_map(&c, &p, &random_velocity(&c, &p, r, &mut rng), None).unwrap().end();
        let (pq, qs, ps) = (distance(&c, &p, &q).unwrap(), distance(&c, &q, &s).unwrap(), distance(&c, &p, &s).unwrap());
        prop_assert!(pq + qs - ps >= -1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn renormalizing_twice_is_trivial(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let group = IsometryGroup::deck(
            vec![AffineIsometry::translation(pt(&[1.0, 0.0])), AffineIsometry::translation(pt(&[0.0, 1.0]))],
            Domain { bounds: vec![(0.0, 1.0), (0.0, 1.0)] },
        ).unwrap();
        let shift = pt(&[rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)]);
        let (p, q) = (rng.gen_range(-2i32..=2) as f64, rng.gen_range(-2i32..=2) as f64);
        let start = shift.clone();
        let twist = group.element_relating(&start, &(&start + pt(&[p, q]))).unwrap();
        let chart = chart(Which::Euclidean);
        let c = resample(|t| Ok(&shift + pt(&[t * p + 0.1 * (2.0 * PI * t).sin(), t * q])), &chart, 32, Some(twist)).unwrap();
        let once = renormalize(&c, &group).unwrap();
        let twice = renormalize(&once.image, &group).unwrap();
        prop_assert!(twice.element.is_identity(Ambient::Euclidean));
        prop_assert!((once.image.energy() - c.energy()).abs() <= 1e-12 * c.energy().max(1.0));
    }

    #[test]
    fn group_outputs_are_subgroups(a in 0usize..48, b in 0usize..48, x in prop::array::uniform3(-1.0f64..1.0)) {
        let gens = vec![
            AffineIsometry::linear_map(signed_permutation(a)).unwrap(),
            AffineIsometry::linear_map(signed_permutation(b)).unwrap(),
        ];
        let g = IsometryGroup::finite(gens, Ambient::Euclidean, 100).unwrap();
        // points on coordinate planes and diagonals have larger isotropy
        let p = pt(&[x[0], if x[1] > 0.5 { x[0] } else { x[1] }, if x[2] > 0.5 { 0.0 } else { x[2] }]);
        let gp = isotropy(&g, &p, 1e-12);
        let nz = normalizer(&g, &gp);
        let orient = orientation_subgroup(&g);
        for set in [&gp, &nz, &orient] {
            prop_assert!(closed_under_group_ops(set));
        }
        prop_assert!(orient.iter().all(|e| e.determinant() == 1.0));
        prop_assert!(orient.len() * 2 == g.elements().len() || orient.len() == g.elements().len());
        let fixed = fixed_set(&gp);
        for k in 0..fixed.directions.ncols() {
            let y = &fixed.base + fixed.directions.column(k);
            for e in &gp {
                prop_assert!((e.apply(&y) - &y).amax() <= 1e-10);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Orientation-preserving cyclic actions on odd spheres reduce through
    /// odd-dimensional fixed sets to a verified closed geodesic.
    #[test]
    fn odd_sphere_reductions(blocks in 2usize..=3, order in 2usize..=7, ks in prop::array::uniform3(0usize..7)) {
        let n = 2 * blocks;
        let angles: Vec<f64> = ks[..blocks].iter().map(|k| 2.0 * PI * (k % order) as f64 / order as f64).collect();
        let gen = AffineIsometry::linear_map(block_rotation(n, &angles)).unwrap();
        let group = IsometryGroup::finite(vec![gen], Ambient::Euclidean, 100).unwrap();
        let orb = DevelopableOrbifold::sphere(n - 1, group).unwrap();
        let r = find_closed_geodesic_via_reduction(&orb).unwrap();
        prop_assert_eq!(r.status, ReductionStatus::Found);
        prop_assert!(r.chain.odd_dimensions());
        prop_assert!(r.chain.strictly_decreasing());
        for step in &r.chain.steps {
            prop_assert!(step.invariance_passed());
            prop_assert!(step.stratum.normal_free);
            prop_assert!(step.stratum.isotropy.iter().all(|g| g.determinant() > 0.0));
        }
        let t = r.twist_report.as_ref().unwrap();
        prop_assert!(t.position_residual <= 1e-8 && t.velocity_residual <= 1e-8);
        prop_assert!((r.geodesic.as_ref().unwrap().length() - 2.0 * PI).abs() <= 1e-9);
    }
}

#[test]
fn sweepout_boundary_loops_have_zero_energy() {
    let s = chart(Which::Sphere);
    let sw = build_sweepout(latitude_map(&s), &s, 2, 21, 32, Executor::Sequential).unwrap();
    let mut boundary = 0;
    for (lp, &b) in sw.loops().iter().zip(sw.boundary()) {
        if b {
            assert_eq!(lp.energy(), 0.0);
            boundary += 1;
        }
    }
    assert_eq!(boundary, 2);
}

#[test]
fn sequential_and_parallel_sweepouts_agree() {
    let s = chart(Which::Sphere);
    let a = build_sweepout(latitude_map(&s), &s, 2, 21, 32, Executor::Sequential).unwrap();
    let b = build_sweepout(latitude_map(&s), &s, 2, 21, 32, Executor::Parallel).unwrap();
    for (x, y) in a.loops().iter().zip(b.loops()) {
        assert_eq!(x.vertices(), y.vertices());
        assert_eq!(x.energy().to_bits(), y.energy().to_bits());
    }
}
