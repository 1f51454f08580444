use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::eisenstein::LatticeSpec;
use crate::geometry::{build_grid, DomainSpec, Resolution};

fn cube(n: usize) -> OperatorContext {
    let g = build_grid(&DomainSpec::unit_cube(1.0), Resolution::cubic(n, n)).unwrap();
    OperatorContext::flat(g, 1.0).unwrap()
}

fn torus(n: usize, l: usize) -> OperatorContext {
    let d = DomainSpec::periodic(LatticeSpec::new(3, l).unwrap(), 1.0);
    let g = build_grid(&d, Resolution::cubic(n, n)).unwrap();
    OperatorContext::periodized(g, 1.0, 1e-8).unwrap()
}

fn random(len: usize, rng: &mut ChaCha8Rng) -> Section {
    Section {
        values: (0..len)
            .map(|_| {
                let mut b = [0.0; DIM];
                b.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                Multivector::from_blades(b)
            })
            .collect(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn teodorescu_is_linear() {
    let ctx = cube(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(ctx.grid.cells.len(), &mut rng);
    let b = random(ctx.grid.cells.len(), &mut rng);
    let mut ab = a.clone();
    ab.axpy(-2.5, &b);
    let lhs = teodorescu(&ab, &ctx, None).unwrap();
    let mut rhs = teodorescu(&a, &ctx, None).unwrap();
    rhs.axpy(-2.5, &teodorescu(&b, &ctx, None).unwrap());
    assert!(lhs.sub(&rhs).norm() <= 1e-12 * lhs.norm());
}

#[test]
fn zero_input_gives_zero() {
    let ctx = cube(3);
    let z = Section::zeros(ctx.grid.cells.len());
    assert!(teodorescu(&z, &ctx, None).unwrap().norm() == 0.0);
    let zf = Section::zeros(ctx.grid.faces.len());
    assert!(cauchy(&zf, &ctx, None).unwrap().norm() == 0.0);
}

#[test]
fn teodorescu_transpose_is_adjoint() {
    for ctx in [cube(3), torus(3, 1)] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(ctx.grid.cells.len(), &mut rng);
        let b = random(ctx.grid.cells.len(), &mut rng);
        let lhs = teodorescu(&a, &ctx, None).unwrap().dot(&b);
        let rhs = a.dot(&teodorescu_transpose(&b, &ctx).unwrap());
        assert!(close(lhs, rhs, 1e-11), "{lhs} {rhs}");
    }
}

#[test]
fn cauchy_transpose_is_adjoint() {
    let ctx = cube(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(ctx.grid.faces.len(), &mut rng);
    let b = random(ctx.grid.cells.len(), &mut rng);
    let lhs = cauchy(&a, &ctx, None).unwrap().dot(&b);
    let rhs = a.dot(&cauchy_transpose(&b, &ctx).unwrap());
    assert!(close(lhs, rhs, 1e-11), "{lhs} {rhs}");
}

#[test]
fn grad_transpose_is_adjoint() {
    let ctx = cube(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random(ctx.grid.cells.len(), &mut rng);
    let v = random(ctx.grid.cells.len(), &mut rng);
    let lhs = grad(&p, &ctx.grid).dot(&v);
    let rhs = p.dot(&grad_transpose(&v, &ctx.grid));
    assert!(close(lhs, rhs, 1e-12), "{lhs} {rhs}");
}

#[test]
fn targets_restrict_output() {
    let ctx = cube(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(ctx.grid.cells.len(), &mut rng);
    let full = teodorescu(&a, &ctx, None).unwrap();
    let some = [0usize, 7, 20];
    let part = teodorescu(&a, &ctx, Some(&some)).unwrap();
    for c in some {
        assert!((full.values[c] - part.values[c]).norm() < 1e-14);
    }
}

#[test]
fn dirac_of_constant_is_mass_term() {
    let ctx = cube(3);
    let c = Multivector::e(2) + Multivector::scalar(0.5);
    let s = Section { values: vec![c; ctx.grid.cells.len()] };
    let d = apply_dirac(&s, &ctx, DiracSign::Plus).unwrap();
    let want = Multivector::f_dagger().gp(&c);
    for v in &d.values {
        assert!((*v - want).norm() < 1e-13);
    }
    let m = apply_dirac(&s, &ctx, DiracSign::Minus).unwrap();
    assert!((m.values[0] + want).norm() < 1e-13);
}

#[test]
fn dirac_scalar_part_is_divergence() {
    let ctx = cube(6);
    let g = &ctx.grid;
    let u = Section::on_cells(g, |c| {
        let x = c.center.x;
        Multivector::vector([x[0] * x[1], x[2].sin(), x[0] * x[0]])
    });
    let d = apply_dirac(&u, &ctx, DiracSign::Plus).unwrap();
    let dv = div(&u, g);
    for (a, b) in d.values.iter().zip(&dv.values) {
        assert!((a.scalar_part() + b.scalar_part()).abs() < 1e-12);
    }
}

#[test]
fn dirac_squared_is_heat_operator() {
    // D² = -Δ/k + ∂t on a quadratic-in-space, linear-in-time scalar
    let g = build_grid(&DomainSpec::unit_cube(1.0), Resolution::cubic(8, 8)).unwrap();
    let k = 2.0;
    let ctx = OperatorContext::flat(g, k).unwrap();
    let u = Section::on_cells(&ctx.grid, |c| {
        let x = c.center.x;
        Multivector::scalar(x[0] * x[0] + 2.0 * x[1] * x[2] + 3.0 * c.center.t)
    });
    let d = apply_dirac(&u, &ctx, DiracSign::Plus).unwrap();
    let dd = apply_dirac(&d, &ctx, DiracSign::Plus).unwrap();
    let want = -2.0 / k + 3.0;
    for c in ctx.grid.interior_margin() {
        let cell = &ctx.grid.cells[c];
        if cell.index.iter().take(3).any(|&i| !(2..=5).contains(&i)) || cell.index[3] < 2 {
            continue;
        }
        assert!((dd.values[c].scalar_part() - want).abs() < 1e-9, "{}", dd.values[c].scalar_part());
    }
}

#[test]
fn borel_pompeiu_holds_for_linear_field() {
    let ctx = cube(4);
    let u = Section::on_cells(&ctx.grid, |c| Multivector::e(1).scale(c.center.x[0]));
    let tr = Section::on_faces(&ctx.grid, |f| Multivector::e(1).scale(f.center.x[0]));
    let r = borel_pompeiu_residual(&u, &tr, &ctx).unwrap();
    assert!(r.relative < 0.02, "{r:?}");
}

#[test]
fn cauchy_of_constant_on_torus_is_constant() {
    let ctx = torus(4, 0);
    let tr = Section::on_faces(&ctx.grid, |f| match f.kind {
        FaceKind::Initial => Multivector::f_dagger(),
        _ => Multivector::zero(),
    });
    let out = cauchy(&tr, &ctx, None).unwrap();
    for v in &out.values {
        assert!((*v - Multivector::f_dagger()).norm() < 1e-12);
    }
}

#[test]
fn bergman_dense_is_idempotent() {
    let mut d = DomainSpec::unit_cube(1.0);
    let mut mask = vec![false; 8];
    mask[0] = true;
    mask[1] = true;
    d.mask = Some(mask);
    let g = build_grid(&d, Resolution::cubic(2, 2)).unwrap();
    let ctx = OperatorContext::flat(g, 1.0).unwrap();
    let fac = bergman_build(&ctx, 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random(ctx.grid.cells.len(), &mut rng);
    let p = bergman_p(&s, &fac, &ctx).unwrap();
    let pp = bergman_p(&p, &fac, &ctx).unwrap();
    assert!(pp.sub(&p).norm() <= 1e-8 * s.norm());
    let b = random(ctx.grid.cells.len(), &mut rng);
    let lhs = p.dot(&b);
    let rhs = s.dot(&bergman_p_transpose(&b, &fac, &ctx).unwrap());
    assert!(close(lhs, rhs, 1e-9), "{lhs} {rhs}");
}

#[test]
fn bergman_circulant_matches_projection_properties() {
    let ctx = torus(2, 2);
    let fac = bergman_build(&ctx, 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random(ctx.grid.cells.len(), &mut rng);
    let p = bergman_p(&s, &fac, &ctx).unwrap();
    let pp = bergman_p(&p, &fac, &ctx).unwrap();
    assert!(pp.sub(&p).norm() <= 1e-8 * s.norm());
    let b = random(ctx.grid.cells.len(), &mut rng);
    let lhs = p.dot(&b);
    let rhs = s.dot(&bergman_p_transpose(&b, &fac, &ctx).unwrap());
    assert!(close(lhs, rhs, 1e-9), "{lhs} {rhs}");
}

#[test]
fn exact_inverse_of_singular_system_is_rejected() {
    let ctx = torus(2, 0);
    assert!(matches!(bergman_build(&ctx, 0.0), Err(OperatorError::Singular { .. })));
}

#[test]
fn wrong_section_size_is_rejected() {
    let ctx = cube(2);
    let s = Section::zeros(3);
    assert!(teodorescu(&s, &ctx, None).is_err());
    assert!(apply_dirac(&s, &ctx, DiracSign::Plus).is_err());
}

fn shift_axis0(s: &Section, grid: &crate::geometry::SpaceTimeGrid) -> Section {
    let mut out = Section::zeros(s.len());
    for c in 0..s.len() {
        let nb = grid.step(c, 0, 1).unwrap();
        out.values[nb.cell] = s.values[c] * nb.sign;
    }
    out
}

#[test]
fn torus_operators_commute_with_twisted_shifts() {
    for l in [0, 1, 3] {
        let ctx = torus(3, l);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random(ctx.grid.cells.len(), &mut rng);
        let a = shift_axis0(&teodorescu(&g, &ctx, None).unwrap(), &ctx.grid);
        let b = teodorescu(&shift_axis0(&g, &ctx.grid), &ctx, None).unwrap();
        assert!(a.sub(&b).norm() <= 1e-10 * a.norm(), "l={l} {}", a.sub(&b).norm() / a.norm());
        let tr = |s: &Section| crate::geometry::trace(&ctx.grid, s);
        let a = shift_axis0(&cauchy(&tr(&g), &ctx, None).unwrap(), &ctx.grid);
        let b = cauchy(&tr(&shift_axis0(&g, &ctx.grid)), &ctx, None).unwrap();
        assert!(a.sub(&b).norm() <= 1e-10 * a.norm(), "cauchy l={l} {}", a.sub(&b).norm() / a.norm());
    }
}

#[test]
fn excluded_diagonal_still_converges() {
    let mut res = Vec::new();
    for n in [4, 8] {
        let g = build_grid(&DomainSpec::unit_cube(1.0), Resolution::cubic(n, n)).unwrap();
        let ctx =
            OperatorContext::new(g, KernelSpec::new(1.0).unwrap(), KernelKind::Flat, DiagonalPolicy::Exclude).unwrap();
        let u = Section::on_cells(&ctx.grid, |c| Multivector::e(1).scale(c.center.x[0]));
        let tr = Section::on_faces(&ctx.grid, |f| Multivector::e(1).scale(f.center.x[0]));
        res.push(borel_pompeiu_residual(&u, &tr, &ctx).unwrap().relative);
    }
    assert!(res[0] / res[1] >= 1.5, "{res:?}");
}
