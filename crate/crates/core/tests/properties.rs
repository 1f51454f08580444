use hypercomplex_mhd::algebra::{Multivector, Quaternion, Rotor, DIM};
use hypercomplex_mhd::eisenstein::{eisenstein, lattice_sign, shell, shell_size, tail_bound, LatticeSpec};
use hypercomplex_mhd::geometry::{build_grid, project, torus_norm, DomainSpec, Resolution, Section};
use hypercomplex_mhd::kernels::{fundamental_e, rotated_kernel, KernelSpec, SpaceTimePoint};
use hypercomplex_mhd::mhd::{magnetic_bracket, CoefficientMode, MHDConfig};
use hypercomplex_mhd::operators::{teodorescu, teodorescu_transpose, OperatorContext};
use proptest::prelude::*;

fn mv() -> impl Strategy<Value = Multivector> {
    prop::array::uniform32(-2.0..2.0f64).prop_map(Multivector::from_blades)
}

fn point() -> impl Strategy<Value = SpaceTimePoint> {
    (prop::array::uniform3(-1.5..1.5f64), 0.05..2.0f64).prop_map(|(x, t)| SpaceTimePoint::new(x, t))
}

fn quat() -> impl Strategy<Value = Quaternion> {
    (-1.0..1.0f64, prop::array::uniform3(-1.0..1.0f64))
        .prop_filter("nonzero", |(w, v)| w * w + v.iter().map(|c| c * c).sum::<f64>() > 1e-3)
        .prop_map(|(w, v)| Quaternion::new(w, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_is_associative(a in mv(), b in mv(), c in mv()) {
        let lhs = (a * b) * c;
        prop_assert!((lhs - a * (b * c)).norm() <= 1e-12 * (1.0 + lhs.norm()));
    }

    #[test]
    fn product_distributes(a in mv(), b in mv(), c in mv()) {
        prop_assert!((a * (b + c) - (a * b + a * c)).norm() <= 1e-12 * (1.0 + a.norm() * (b.norm() + c.norm())));
    }

    #[test]
    fn conjugation_reverses_products(a in mv(), b in mv()) {
        let lhs = (a * b).conjugate();
        prop_assert!((lhs - b.conjugate() * a.conjugate()).norm() <= 1e-12 * (1.0 + lhs.norm()));
    }

    #[test]
    fn witt_coordinates_round_trip(a in mv()) {
        let back = Multivector::from_witt(&a.witt_coeffs());
        prop_assert!((back - a).norm() <= 1e-14 * (1.0 + a.norm()));
    }

    #[test]
    fn rotors_preserve_length(q in quat(), x in prop::array::uniform3(-2.0..2.0f64)) {
        let r = Rotor::normalized(q).unwrap();
        let y = r.rotate(x);
        let n = |v: [f64; 3]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assert!((n(y) - n(x)).abs() <= 1e-13 * (1.0 + n(x)));
    }

    #[test]
    fn kernel_is_rotation_invariant(q in quat(), p in point(), k in 0.25..4.0f64) {
        let spec = KernelSpec::new(k).unwrap();
        let r = Rotor::normalized(q).unwrap();
        let e = fundamental_e(p, &spec).unwrap();
        let rot = rotated_kernel(&r, p, &spec).unwrap();
        prop_assert!((rot - e).norm() <= 1e-12 * (1.0 + e.norm()));
    }

    #[test]
    fn kernel_vanishes_before_source(x in prop::array::uniform3(-1.0..1.0f64), t in -2.0..-0.01f64) {
        let e = fundamental_e(SpaceTimePoint::new(x, t), &KernelSpec::new(1.0).unwrap()).unwrap();
        prop_assert!(e.is_zero());
    }

    #[test]
    fn projection_is_idempotent(p in point(), rank in 1usize..=3) {
        let lat = LatticeSpec::new(rank, 0).unwrap();
        let once = project(p, &lat);
        let twice = project(once, &lat);
        prop_assert_eq!(once.x, twice.x);
        for d in 0..rank {
            prop_assert!((0.0..1.0).contains(&once.x[d]));
        }
    }

    #[test]
    fn torus_norm_ignores_lattice_translations(p in point(), shift in prop::array::uniform3(-3i64..=3)) {
        let lat = LatticeSpec::new(3, 0).unwrap();
        let moved = SpaceTimePoint::new(std::array::from_fn(|i| p.x[i] + shift[i] as f64), p.t);
        prop_assert!((torus_norm(p, &lat, 2.0) - torus_norm(moved, &lat, 2.0)).abs() <= 1e-12);
    }

    #[test]
    fn shells_have_the_predicted_size(p in 1usize..=3, m in 0usize..=4) {
        let s = shell(p, m);
        prop_assert_eq!(s.len(), shell_size(p, m));
        for w in &s {
            prop_assert_eq!(w.iter().map(|c| c.unsigned_abs()).max().unwrap() as usize, m);
        }
    }

    #[test]
    fn lattice_sign_is_multiplicative(a in prop::array::uniform3(-4i64..=4), b in prop::array::uniform3(-4i64..=4), l in 0usize..=3) {
        let ab: Vec<i64> = (0..3).map(|i| a[i] + b[i]).collect();
        prop_assert_eq!(lattice_sign(&ab, l), lattice_sign(&a, l) * lattice_sign(&b, l));
    }

    #[test]
    fn tail_bound_shrinks_with_order(m in 2usize..8, t in 0.1..1.0f64, k in 0.5..4.0f64, p in 1usize..=3) {
        let a = tail_bound(m, 0.5, t, k, p).unwrap();
        let b = tail_bound(m + 1, 0.5, t, k, p).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn eisenstein_is_quasi_periodic(x in prop::array::uniform3(-0.4..0.4f64), t in 0.2..0.8f64, l in 0usize..=3, d in 0usize..3) {
        let spec = KernelSpec::new(1.0).unwrap();
        let lat = LatticeSpec::new(3, l).unwrap();
        let m = 6;
        let mut xs = x;
        xs[d] += 1.0;
        let a = eisenstein(SpaceTimePoint::new(xs, t), &spec, &lat, m).unwrap();
        let b = eisenstein(SpaceTimePoint::new(x, t), &spec, &lat, m).unwrap();
        let sign = if d < l { -1.0 } else { 1.0 };
        prop_assert!((a - b * sign).norm() <= 2.0 * tail_bound(m - 1, 1.7, t, 1.0, 3).unwrap());
    }

    #[test]
    fn config_text_round_trips(
        n in 2usize..12, nt in 2usize..12, re in 0.1..10.0f64, rm in 0.1..10.0f64,
        corrected in any::<bool>(), magnetic in any::<bool>(), wave in 0.0..1.0f64,
    ) {
        let cfg = MHDConfig {
            n, nt, re, rm, magnetic, b_wave: wave,
            mode: if corrected { CoefficientMode::Corrected } else { CoefficientMode::Literal },
            ..Default::default()
        };
        prop_assert_eq!(MHDConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

fn random_section(len: usize, seed: &[f64]) -> Section {
    Section {
        values: (0..len)
            .map(|c| Multivector::from_blades(std::array::from_fn(|b| seed[(c * DIM + b) % seed.len()])))
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn teodorescu_is_linear_and_adjoint(
        seed_a in prop::collection::vec(-1.0..1.0f64, 97),
        seed_b in prop::collection::vec(-1.0..1.0f64, 89),
        s in -3.0..3.0f64,
    ) {
        let g = build_grid(&DomainSpec::unit_cube(1.0), Resolution::cubic(2, 3)).unwrap();
        let ctx = OperatorContext::flat(g, 1.0).unwrap();
        let len = ctx.grid.cells.len();
        let (a, b) = (random_section(len, &seed_a), random_section(len, &seed_b));
        let mut ab = a.clone();
        ab.axpy(s, &b);
        let mut sum = teodorescu(&a, &ctx, None).unwrap();
        sum.axpy(s, &teodorescu(&b, &ctx, None).unwrap());
        let lhs = teodorescu(&ab, &ctx, None).unwrap();
        prop_assert!(lhs.sub(&sum).norm() <= 1e-12 * (1.0 + lhs.norm()));
        let x = teodorescu(&a, &ctx, None).unwrap().dot(&b);
        let y = a.dot(&teodorescu_transpose(&b, &ctx).unwrap());
        prop_assert!((x - y).abs() <= 1e-11 * (1.0 + x.abs()));
    }

    #[test]
    fn magnetic_bracket_is_antisymmetric(
        seed_a in prop::collection::vec(-1.0..1.0f64, 61),
        seed_b in prop::collection::vec(-1.0..1.0f64, 53),
    ) {
        let g = build_grid(&DomainSpec::unit_cube(1.0), Resolution::cubic(3, 2)).unwrap();
        let len = g.cells.len();
        let vec_only = |s: Section| Section { values: s.values.iter().map(|m| Multivector::vector(m.vec_part())).collect() };
        let a = vec_only(random_section(len, &seed_a));
        let b = vec_only(random_section(len, &seed_b));
        let ab = magnetic_bracket(&a, &b, &g);
        let ba = magnetic_bracket(&b, &a, &g);
        let mut sum = ab.clone();
        sum.axpy(1.0, &ba);
        prop_assert!(sum.norm() <= 1e-13 * (1.0 + ab.norm()));
    }
}
