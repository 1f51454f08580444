//! Lattice periodization of the parabolic fundamental solution over
//! `Ω_p = ℤe1 + … + ℤe_p`, with spin-structure signs on the first `l`
//! directions:
//!
//! ```text
//! ℰ(x,t;k) = Σ_{ω ∈ ℤ^p} (-1)^{ω_1+…+ω_l} E(x + ω, t; k)
//! ```
//!
//! Sums are truncated at `|ω|_max ≤ M` and accumulated shell by shell.

use thiserror::Error;

use crate::algebra::{Multivector, Quaternion, Rotor};
use crate::kernels::{fundamental_grade_one, grade_one_multivector, KernelError, KernelSpec, SpaceTimePoint};

/// Default upper limit for `choose_truncation`.
pub const DEFAULT_TRUNCATION_CAP: usize = 64;

const ORDER_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EisensteinError {
    #[error("invalid lattice: need 0 <= l <= p <= 3, got p = {p}, l = {l}")]
    InvalidLattice { p: usize, l: usize },
    #[error("tail bound needs M >= floor(r) + 1 = {min}, got M = {m}")]
    BoundPrecondition { m: usize, min: usize },
    #[error("truncation order would exceed {cap}; use a larger tolerance or a smaller t_max")]
    TruncationCap { cap: usize },
    #[error("invalid truncation request: {0}")]
    InvalidRequest(String),
    #[error("rotor does not have order {n} (|a^n - 1| = {residual:e})")]
    NotFiniteOrder { n: usize, residual: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeSpec {
    p: usize,
    l: usize,
}

impl LatticeSpec {
    pub fn new(p: usize, l: usize) -> Result<Self, EisensteinError> {
        if !(1..=3).contains(&p) || l > p {
            return Err(EisensteinError::InvalidLattice { p, l });
        }
        Ok(Self { p, l })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Whether translation along axis `d` (0-based) flips the sign.
    pub fn antiperiodic(&self, d: usize) -> bool {
        d < self.l
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPlan {
    pub m: usize,
    pub tol: f64,
    pub r: f64,
    pub t_max: f64,
    /// largest sampled tail bound at the chosen order
    pub bound: f64,
}

/// `(-1)^{ω_1 + … + ω_l}`.
pub fn lattice_sign(omega: &[i64], l: usize) -> f64 {
    let s: i64 = omega.iter().take(l).sum();
    if s.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Lattice points of `ℤ^p` with max-norm exactly `m`, in lexicographic order.
pub fn shell(p: usize, m: usize) -> Vec<[i64; 3]> {
    let m = m as i64;
    let r = |d: usize| if d < p { -m..=m } else { 0..=0 };
    let mut out = Vec::new();
    for a in r(0) {
        for b in r(1) {
            for c in r(2) {
                if a.abs().max(b.abs()).max(c.abs()) == m {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

/// Number of lattice points in shell `m`: `(2m+1)^p - (2m-1)^p` (and 1 for `m = 0`).
pub fn shell_size(p: usize, m: usize) -> usize {
    if m == 0 {
        1
    } else {
        (2 * m + 1).pow(p as u32) - (2 * m - 1).pow(p as u32)
    }
}

/// Neumaier-compensated accumulator for grade-one coefficients.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: [f64; 5],
    comp: [f64; 5],
}

impl Compensated {
    fn add(&mut self, v: &[f64; 5], s: f64) {
        for (i, vi) in v.iter().enumerate() {
            let x = s * vi;
            let t = self.sum[i] + x;
            if self.sum[i].abs() >= x.abs() {
                self.comp[i] += (self.sum[i] - t) + x;
            } else {
                self.comp[i] += (x - t) + self.sum[i];
            }
            self.sum[i] = t;
        }
    }

    fn value(&self) -> [f64; 5] {
        let mut v = self.sum;
        for (a, c) in v.iter_mut().zip(self.comp) {
            *a += c;
        }
        v
    }
}

/// Blade coordinates of the truncated series.
pub fn eisenstein_grade_one(
    pt: SpaceTimePoint,
    spec: &KernelSpec,
    lat: &LatticeSpec,
    m: usize,
) -> Result<[f64; 5], EisensteinError> {
    let mut acc = Compensated::default();
    for s in 0..=m {
        for w in shell(lat.p, s) {
            let x = [pt.x[0] + w[0] as f64, pt.x[1] + w[1] as f64, pt.x[2] + w[2] as f64];
            let e = fundamental_grade_one(SpaceTimePoint::new(x, pt.t), spec)?;
            acc.add(&e, lattice_sign(&w, lat.l));
        }
    }
    Ok(acc.value())
}

pub fn eisenstein(
    pt: SpaceTimePoint,
    spec: &KernelSpec,
    lat: &LatticeSpec,
    m: usize,
) -> Result<Multivector, EisensteinError> {
    eisenstein_grade_one(pt, spec, lat, m).map(|c| grade_one_multivector(&c))
}

/// Majorant of `‖E(x+ω,t;k)‖` over `|x| ≤ r`, `|ω|_max = m`.
fn shell_term(m: usize, r: f64, t: f64, k: f64, p: usize) -> f64 {
    let mf = m as f64;
    let rho = r + (p as f64).sqrt() * mf;
    let amp = (k / (4.0 * std::f64::consts::PI * t)).powf(1.5);
    let v = k.sqrt() * rho / (2.0 * t);
    let f = 1.5 / t + k * rho * rho / (4.0 * t * t);
    let a = amp * (v * v + f * f + 1.0).sqrt();
    let g = (-k * (mf - r) * (mf - r) / (4.0 * t)).exp();
    shell_size(p, m) as f64 * a * g
}

/// Upper bound for `‖ℰ - ℰ_M‖` on `|x| ≤ r` at time `t`.
pub fn tail_bound(m: usize, r: f64, t: f64, k: f64, p: usize) -> Result<f64, EisensteinError> {
    let min = r.floor() as usize + 1;
    if m < min {
        return Err(EisensteinError::BoundPrecondition { m, min });
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    let mut s = m + 1;
    let mut prev = shell_term(s, r, t, k, p);
    acc += prev;
    loop {
        s += 1;
        let term = shell_term(s, r, t, k, p);
        if term <= 1e-3 * acc || term == 0.0 {
            // consecutive ratios decrease once m > r, so a geometric series dominates the rest
            let q = if prev > 0.0 { term / prev } else { 0.0 };
            if q < 1.0 {
                acc += term / (1.0 - q);
                return Ok(acc);
            }
        }
        acc += term;
        prev = term;
        if s > m + 100_000 {
            return Ok(f64::INFINITY);
        }
    }
}

fn sampled_bound(m: usize, r: f64, t_max: f64, k: f64, p: usize) -> Result<f64, EisensteinError> {
    let mut worst: f64 = 0.0;
    for i in 0..16 {
        let t = t_max * 10f64.powf(-3.0 * i as f64 / 15.0);
        worst = worst.max(tail_bound(m, r, t, k, p)?);
    }
    Ok(worst)
}

pub fn choose_truncation(
    tol: f64,
    r: f64,
    t_max: f64,
    spec: &KernelSpec,
    lat: &LatticeSpec,
) -> Result<TruncationPlan, EisensteinError> {
    choose_truncation_capped(tol, r, t_max, spec, lat, DEFAULT_TRUNCATION_CAP)
}

pub fn choose_truncation_capped(
    tol: f64,
    r: f64,
    t_max: f64,
    spec: &KernelSpec,
    lat: &LatticeSpec,
    cap: usize,
) -> Result<TruncationPlan, EisensteinError> {
    if !(tol > 0.0) || !(t_max > 0.0) || !(r >= 0.0) {
        return Err(EisensteinError::InvalidRequest(format!("tol = {tol}, r = {r}, t_max = {t_max}")));
    }
    let mut m = r.floor() as usize + 1;
    loop {
        if m > cap {
            return Err(EisensteinError::TruncationCap { cap });
        }
        let bound = sampled_bound(m, r, t_max, spec.k(), lat.p)?;
        if bound <= tol {
            return Ok(TruncationPlan { m, tol, r, t_max, bound });
        }
        m += 1;
    }
}

fn rotor_power(a: &Rotor, j: usize) -> Rotor {
    let mut q = Rotor::identity();
    for _ in 0..j {
        q = q.compose(a);
    }
    q
}

/// Periodized kernel symmetrized over the cyclic group generated by `a`:
/// `Σ_{j=1..n} Σ_ω sign(ω) ā^j E(a^j x ā^j + ω, t; k) a^j`.
pub fn cyclic_eisenstein(
    pt: SpaceTimePoint,
    spec: &KernelSpec,
    lat: &LatticeSpec,
    m: usize,
    a: &Rotor,
    n: usize,
) -> Result<Multivector, EisensteinError> {
    if n == 0 {
        return Err(EisensteinError::NotFiniteOrder { n, residual: f64::NAN });
    }
    let an = rotor_power(a, n).quaternion();
    let one = Quaternion::ONE;
    let residual = ((an.w - one.w).powi(2) + an.v.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if residual > ORDER_TOL {
        return Err(EisensteinError::NotFiniteOrder { n, residual });
    }
    let mut out = Multivector::zero();
    for j in 1..=n {
        let aj = rotor_power(a, j);
        let y = aj.rotate(pt.x);
        let e = eisenstein(SpaceTimePoint::new(y, pt.t), spec, lat, m)?;
        let am = aj.multivector();
        out += am.conjugate().gp(&e).gp(&am);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::fundamental_e;

    fn spec(k: f64) -> KernelSpec {
        KernelSpec::new(k).unwrap()
    }

    #[test]
    fn signs() {
        assert_eq!(lattice_sign(&[1, 0, 0], 1), -1.0);
        assert_eq!(lattice_sign(&[1, 1, 0], 2), 1.0);
        assert_eq!(lattice_sign(&[3, -5, 7], 0), 1.0);
        assert!(LatticeSpec::new(2, 3).is_err());
    }

    #[test]
    fn shell_cardinality() {
        for p in 1..=3 {
            for m in 0..6 {
                assert_eq!(shell(p, m).len(), shell_size(p, m));
            }
        }
    }

    #[test]
    fn zero_order_is_single_kernel() {
        let pt = SpaceTimePoint::new([0.2, -0.1, 0.3], 0.4);
        let lat = LatticeSpec::new(3, 1).unwrap();
        let a = eisenstein(pt, &spec(2.0), &lat, 0).unwrap();
        let b = fundamental_e(pt, &spec(2.0)).unwrap();
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn tail_bound_monotone_and_vanishing() {
        let r = 1.2;
        let mut prev = f64::INFINITY;
        for m in 2..8 {
            let b = tail_bound(m, r, 0.5, 1.0, 3).unwrap();
            assert!(b < prev);
            prev = b;
        }
        assert!(tail_bound(2, r, 1e-3, 1.0, 3).unwrap() < 1e-100);
        assert!(tail_bound(1, r, 0.5, 1.0, 3).is_err());
    }

    #[test]
    fn plan_is_minimal() {
        let r = 3f64.sqrt();
        let lat = LatticeSpec::new(3, 0).unwrap();
        let plan = choose_truncation(1e-10, r, 0.5, &spec(1.0), &lat).unwrap();
        assert!(plan.bound <= 1e-10);
        assert!(plan.m > r.floor() as usize + 1);
        assert!(sampled_bound(plan.m - 1, r, 0.5, 1.0, 3).unwrap() > 1e-10);
        let loose = choose_truncation(f64::INFINITY, r, 0.5, &spec(1.0), &lat).unwrap();
        assert_eq!(loose.m, 2);
        let capped = choose_truncation_capped(1e-300, r, 50.0, &spec(1.0), &lat, 4);
        assert!(matches!(capped, Err(EisensteinError::TruncationCap { .. })));
    }

    #[test]
    fn cyclic_with_trivial_group() {
        let pt = SpaceTimePoint::new([0.2, 0.3, -0.1], 0.3);
        let lat = LatticeSpec::new(2, 1).unwrap();
        let a = cyclic_eisenstein(pt, &spec(1.0), &lat, 3, &Rotor::identity(), 1).unwrap();
        let b = eisenstein(pt, &spec(1.0), &lat, 3).unwrap();
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn cyclic_e1_duplicates_terms() {
        let pt = SpaceTimePoint::new([0.2, 0.3, -0.1], 0.3);
        let lat = LatticeSpec::new(3, 0).unwrap();
        let e1 = Rotor::new(Quaternion::new(0.0, [1.0, 0.0, 0.0])).unwrap();
        let got = cyclic_eisenstein(pt, &spec(1.0), &lat, 2, &e1, 4).unwrap();
        let t1 = eisenstein(pt, &spec(1.0), &lat, 2).unwrap();
        let y = e1.rotate(pt.x);
        let am = e1.multivector();
        let te1 = am.conjugate().gp(&eisenstein(SpaceTimePoint::new(y, pt.t), &spec(1.0), &lat, 2).unwrap()).gp(&am);
        assert!((got - (t1 + te1) * 2.0).norm() < 1e-12 * got.norm());
        let half = Rotor::normalized(Quaternion::new(1.0, [0.3, 0.0, 0.0])).unwrap();
        assert!(cyclic_eisenstein(pt, &spec(1.0), &lat, 1, &half, 4).is_err());
    }
}
