//! Fundamental solutions of the parabolic Dirac operator
//! `D⁺ = (1/√k) Σ e_j ∂_j + f ∂_t + f†`, which squares to `-Δ/k + ∂_t`.
//!
//! With the unit-mass heat kernel `Φ(x,t) = H(t) (k/4πt)^{3/2} exp(-k|x|²/4t)`
//! the fundamental solution is `E = D⁺Φ`, i.e.
//!
//! ```text
//! E(x,t;k) = Φ · [ -(√k/2t) Σ e_j x_j + f (k|x|²/4t² - 3/2t) + f† ]
//! ```
//!
//! Kernels live in the grade-one span of `e1..e5`, so they are also exposed as
//! five blade coordinates (`f = (e4+e5)/2`, `f† = (e4-e5)/2`).

use std::f64::consts::PI;

use thiserror::Error;

use crate::algebra::{AlgebraError, Multivector, Rotor};

/// Default exclusion radius around the space-time origin.
pub const SINGULARITY_RADIUS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel parameter k must be positive and finite, got {0}")]
    InvalidK(f64),
    #[error("kernel evaluated at the singularity (x = {x:?}, t = {t})")]
    Singularity { x: [f64; 3], t: f64 },
    #[error(transparent)]
    Rotor(#[from] AlgebraError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimePoint {
    pub x: [f64; 3],
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: [f64; 3], t: f64) -> Self {
        Self { x, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    k: f64,
    eps0: f64,
}

impl KernelSpec {
    pub fn new(k: f64) -> Result<Self, KernelError> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(KernelError::InvalidK(k));
        }
        Ok(Self { k, eps0: SINGULARITY_RADIUS })
    }

    pub fn with_singularity_radius(mut self, eps0: f64) -> Self {
        self.eps0 = eps0;
        self
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Normalization `c_k` of the heat kernel, `(k/4π)^{3/2}`.
    pub fn normalization(&self) -> f64 {
        (self.k / (4.0 * PI)).powf(1.5)
    }
}

/// Unit-mass heat kernel `c_k exp(-k|x|²/4t) / t^{3/2}`, zero for `t ≤ 0`.
pub fn heat_kernel(p: SpaceTimePoint, k: f64) -> f64 {
    if p.t <= 0.0 {
        return 0.0;
    }
    let r2 = p.x.iter().map(|v| v * v).sum::<f64>();
    (k / (4.0 * PI * p.t)).powf(1.5) * (-k * r2 / (4.0 * p.t)).exp()
}

/// Converts `Σ v_j e_j + a f + b f†` to blade coordinates over `e1..e5`.
#[inline]
pub fn witt_grade_one(v: [f64; 3], a: f64, b: f64) -> [f64; 5] {
    [v[0], v[1], v[2], 0.5 * (a + b), 0.5 * (a - b)]
}

/// Multivector with the given grade-one blade coordinates.
pub fn grade_one_multivector(c: &[f64; 5]) -> Multivector {
    let mut b = [0.0; crate::algebra::DIM];
    for (i, v) in c.iter().enumerate() {
        b[1 << i] = *v;
    }
    Multivector::from_blades(b)
}

fn check_singular(p: SpaceTimePoint, spec: &KernelSpec) -> Result<(), KernelError> {
    let r2 = p.x.iter().map(|v| v * v).sum::<f64>() + p.t * p.t;
    if r2.sqrt() < spec.eps0 {
        return Err(KernelError::Singularity { x: p.x, t: p.t });
    }
    Ok(())
}

/// Blade coordinates of `E(x,t;k)`.
pub fn fundamental_grade_one(p: SpaceTimePoint, spec: &KernelSpec) -> Result<[f64; 5], KernelError> {
    check_singular(p, spec)?;
    if p.t <= 0.0 {
        return Ok([0.0; 5]);
    }
    let k = spec.k;
    let t = p.t;
    let phi = heat_kernel(p, k);
    let r2 = p.x.iter().map(|v| v * v).sum::<f64>();
    let c = -k.sqrt() / (2.0 * t) * phi;
    let a = phi * (k * r2 / (4.0 * t * t) - 1.5 / t);
    Ok(witt_grade_one([c * p.x[0], c * p.x[1], c * p.x[2]], a, phi))
}

pub fn fundamental_e(p: SpaceTimePoint, spec: &KernelSpec) -> Result<Multivector, KernelError> {
    fundamental_grade_one(p, spec).map(|c| grade_one_multivector(&c))
}

/// The `k = 1` kernel.
pub fn fundamental_g(p: SpaceTimePoint) -> Result<Multivector, KernelError> {
    fundamental_e(p, &KernelSpec::new(1.0)?)
}

/// `ā E(a x ā, t; k) a`, equal to `E(x,t;k)` for every unit rotor.
pub fn rotated_kernel(a: &Rotor, p: SpaceTimePoint, spec: &KernelSpec) -> Result<Multivector, KernelError> {
    let y = a.rotate(p.x);
    let e = fundamental_e(SpaceTimePoint::new(y, p.t), spec)?;
    let am = a.multivector();
    Ok(am.conjugate().gp(&e).gp(&am))
}

/// Central-difference application of `D⁺` to a multivector field at `p`.
pub fn dirac_central<F>(field: F, p: SpaceTimePoint, k: f64, step: f64) -> Result<Multivector, KernelError>
where
    F: Fn(SpaceTimePoint) -> Result<Multivector, KernelError>,
{
    let mut out = Multivector::zero();
    let s = 1.0 / k.sqrt();
    for j in 0..3 {
        let mut xp = p.x;
        let mut xm = p.x;
        xp[j] += step;
        xm[j] -= step;
        let d = (field(SpaceTimePoint::new(xp, p.t))? - field(SpaceTimePoint::new(xm, p.t))?) * (0.5 / step);
        out += Multivector::e(j + 1).gp(&d) * s;
    }
    let dt =
        (field(SpaceTimePoint::new(p.x, p.t + step))? - field(SpaceTimePoint::new(p.x, p.t - step))?) * (0.5 / step);
    out += Multivector::f().gp(&dt);
    out += Multivector::f_dagger().gp(&field(p)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Quaternion;

    fn spec(k: f64) -> KernelSpec {
        KernelSpec::new(k).unwrap()
    }

    #[test]
    fn causal_and_peak_value() {
        assert_eq!(heat_kernel(SpaceTimePoint::new([0.3, 0.0, 0.0], -1.0), 2.0), 0.0);
        let t = 0.7;
        let k = 3.0;
        let want = (k / (4.0 * PI * t)).powf(1.5);
        assert!((heat_kernel(SpaceTimePoint::new([0.0; 3], t), k) - want).abs() < 1e-15);
        let e = fundamental_e(SpaceTimePoint::new([0.2, 0.1, 0.4], -0.5), &spec(2.0)).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn heat_kernel_has_unit_mass() {
        for &t in &[0.1f64, 1.0] {
            for &k in &[1.0, 4.0] {
                let l = 12.0 * (t / k).sqrt();
                let n = 120;
                let h = 2.0 * l / n as f64;
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        for m in 0..n {
                            let x = [-l + (i as f64 + 0.5) * h, -l + (j as f64 + 0.5) * h, -l + (m as f64 + 0.5) * h];
                            s += heat_kernel(SpaceTimePoint::new(x, t), k);
                        }
                    }
                }
                assert!((s * h * h * h - 1.0).abs() < 1e-6, "mass {} at t={t}, k={k}", s * h * h * h);
            }
        }
    }

    #[test]
    fn singularity_is_reported() {
        let r = fundamental_e(SpaceTimePoint::new([0.0; 3], 0.0), &spec(1.0));
        assert!(matches!(r, Err(KernelError::Singularity { .. })));
        assert!(KernelSpec::new(-1.0).is_err());
    }

    #[test]
    fn g_f_dagger_coefficient_is_heat_weight() {
        let p = SpaceTimePoint::new([1.0, 0.0, 0.0], 1.0);
        let g = fundamental_g(p).unwrap();
        let fd = g.witt(0, crate::algebra::Witt::FDagger);
        assert!((fd - heat_kernel(p, 1.0)).abs() < 1e-16);
    }

    #[test]
    fn monogenic_off_singularity() {
        let p = SpaceTimePoint::new([0.7, 0.3, 0.1], 0.5);
        let sp = spec(2.0);
        let r = |h: f64| dirac_central(|q| fundamental_e(q, &sp), p, 2.0, h).unwrap().norm();
        let ratio = r(1e-2) / r(5e-3);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rotation_by_e1_leaves_kernel_invariant() {
        let a = Rotor::new(Quaternion::new(0.0, [1.0, 0.0, 0.0])).unwrap();
        let p = SpaceTimePoint::new([0.3, -0.2, 0.5], 0.4);
        let d = rotated_kernel(&a, p, &spec(3.0)).unwrap() - fundamental_e(p, &spec(3.0)).unwrap();
        assert!(d.norm() < 1e-12);
    }
}
