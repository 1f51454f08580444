//! Real Clifford–Witt algebra housing the quaternionic units `e1, e2, e3`
//! and the nilpotent Witt pair `f`, `f†`.
//!
//! The algebra is realized as the 32-dimensional Clifford algebra generated by
//! `e1..e5` with `e1² = e2² = e3² = e5² = -1`, `e4² = +1`, with
//! `f = (e4 + e5) / 2` and `f† = (e4 - e5) / 2`. In this realization
//!
//! * `e_i e_j + e_j e_i = -2 δ_ij`
//! * `f² = f†² = 0`, `f f† + f† f = 1`
//! * `e_j f = -f e_j`, `e_j f† = -f† e_j`
//!
//! Internally coefficients are stored on the 32 Clifford blades (bitmasks over
//! `e1..e5`). The public coordinate system is the Witt basis `e_A · w` with
//! `A ⊆ {1,2,3}` and `w ∈ {1, f, f†, f f†}`, addressed by [`witt_index`].

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::OnceLock;

use thiserror::Error;

pub const DIM: usize = 32;

/// Signature of the generators `e1..e5`.
pub const METRIC: [f64; 5] = [-1.0, -1.0, -1.0, 1.0, -1.0];

/// Tolerance on `|a| - 1` accepted for rotors.
pub const ROTOR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("rotor must have unit norm, got |a| = {0}")]
    NonUnitRotor(f64),
}

/// Witt factor attached to a spatial blade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Witt {
    One = 0,
    F = 1,
    FDagger = 2,
    FFDagger = 3,
}

/// Public coefficient index of `e_A · w`; `spatial` is a bitmask over `e1, e2, e3`.
pub fn witt_index(spatial: usize, w: Witt) -> usize {
    debug_assert!(spatial < 8);
    4 * spatial + w as usize
}

struct BladeTable {
    sign: [[f64; DIM]; DIM],
}

fn blade_sign(a: usize, b: usize) -> f64 {
    let mut s = 1.0;
    // reorder e_a e_b into ascending order
    for i in 0..5 {
        if (b >> i) & 1 == 1 && ((a >> (i + 1)).count_ones() % 2 == 1) {
            s = -s;
        }
    }
    let common = a & b;
    for (i, m) in METRIC.iter().enumerate() {
        if (common >> i) & 1 == 1 {
            s *= m;
        }
    }
    s
}

fn table() -> &'static BladeTable {
    static TABLE: OnceLock<BladeTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut sign = [[0.0; DIM]; DIM];
        for (a, row) in sign.iter_mut().enumerate() {
            for (b, s) in row.iter_mut().enumerate() {
                *s = blade_sign(a, b);
            }
        }
        let t = BladeTable { sign };
        verify_table(&t);
        t
    })
}

fn verify_table(t: &BladeTable) {
    let sq = |i: usize| t.sign[1 << i][1 << i];
    for (i, m) in METRIC.iter().enumerate() {
        assert_eq!(sq(i), *m, "generator e{} has wrong square", i + 1);
        for j in 0..5 {
            if i != j {
                let (a, b) = (1 << i, 1 << j);
                assert_eq!(t.sign[a][b], -t.sign[b][a], "e{} and e{} must anticommute", i + 1, j + 1);
            }
        }
    }
}

/// Element of the 32-dimensional Clifford–Witt algebra.
#[derive(Clone, Copy, PartialEq)]
pub struct Multivector {
    blades: [f64; DIM],
}

impl Default for Multivector {
    fn default() -> Self {
        Self::zero()
    }
}

impl fmt::Debug for Multivector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.witt_coeffs();
        let nz: Vec<(usize, f64)> = w.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect();
        write!(f, "Multivector{nz:?}")
    }
}

impl Multivector {
    pub const fn zero() -> Self {
        Self { blades: [0.0; DIM] }
    }

    pub fn one() -> Self {
        Self::scalar(1.0)
    }

    pub fn scalar(s: f64) -> Self {
        let mut m = Self::zero();
        m.blades[0] = s;
        m
    }

    /// Quaternionic unit `e_i`, `i ∈ {1, 2, 3}`.
    pub fn e(i: usize) -> Self {
        assert!((1..=3).contains(&i), "spatial unit index must be 1, 2 or 3");
        let mut m = Self::zero();
        m.blades[1 << (i - 1)] = 1.0;
        m
    }

    pub fn f() -> Self {
        let mut m = Self::zero();
        m.blades[8] = 0.5;
        m.blades[16] = 0.5;
        m
    }

    pub fn f_dagger() -> Self {
        let mut m = Self::zero();
        m.blades[8] = 0.5;
        m.blades[16] = -0.5;
        m
    }

    /// `x1 e1 + x2 e2 + x3 e3`.
    pub fn vector(x: [f64; 3]) -> Self {
        let mut m = Self::zero();
        m.blades[1] = x[0];
        m.blades[2] = x[1];
        m.blades[4] = x[2];
        m
    }

    /// Raw Clifford-blade coefficients (bitmask over `e1..e5`).
    pub fn blades(&self) -> &[f64; DIM] {
        &self.blades
    }

    pub fn from_blades(blades: [f64; DIM]) -> Self {
        Self { blades }
    }

    /// Coefficients in the public Witt basis `e_A · w`.
    pub fn witt_coeffs(&self) -> [f64; DIM] {
        let b = &self.blades;
        let mut w = [0.0; DIM];
        for a in 0..8 {
            let (b1, b4, b5, b45) = (b[a], b[a | 8], b[a | 16], b[a | 24]);
            w[4 * a] = b1 + b45;
            w[4 * a + 1] = b4 + b5;
            w[4 * a + 2] = b4 - b5;
            w[4 * a + 3] = -2.0 * b45;
        }
        w
    }

    pub fn from_witt(w: &[f64; DIM]) -> Self {
        let mut b = [0.0; DIM];
        for a in 0..8 {
            let (w0, w1, w2, w3) = (w[4 * a], w[4 * a + 1], w[4 * a + 2], w[4 * a + 3]);
            b[a] = w0 + 0.5 * w3;
            b[a | 8] = 0.5 * (w1 + w2);
            b[a | 16] = 0.5 * (w1 - w2);
            b[a | 24] = -0.5 * w3;
        }
        Self { blades: b }
    }

    pub fn witt(&self, spatial: usize, w: Witt) -> f64 {
        self.witt_coeffs()[witt_index(spatial, w)]
    }

    pub fn scalar_part(&self) -> f64 {
        self.blades[0] + self.blades[24]
    }

    pub fn vec_part(&self) -> [f64; 3] {
        let b = &self.blades;
        [b[1] + b[1 | 24], b[2] + b[2 | 24], b[4] + b[4 | 24]]
    }

    /// Euclidean norm of the Witt coordinates.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.witt_coeffs().iter().map(|c| c * c).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.blades.iter().all(|c| *c == 0.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        m.blades.iter_mut().for_each(|c| *c *= s);
        m
    }

    /// Accumulate `s * other` into `self`.
    pub fn axpy(&mut self, s: f64, other: &Multivector) {
        for (a, b) in self.blades.iter_mut().zip(other.blades.iter()) {
            *a += s * b;
        }
    }

    /// Geometric product `self * rhs`.
    pub fn gp(&self, rhs: &Multivector) -> Multivector {
        let t = table();
        let mut out = [0.0; DIM];
        for (a, &x) in self.blades.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &t.sign[a];
            for (b, &y) in rhs.blades.iter().enumerate() {
                if y != 0.0 {
                    out[a ^ b] += row[b] * x * y;
                }
            }
        }
        Multivector { blades: out }
    }

    /// Anti-automorphism fixing `1, f, f†` and negating `e1, e2, e3`.
    pub fn conjugate(&self) -> Multivector {
        let mut out = self.blades;
        for (mask, c) in out.iter_mut().enumerate() {
            let grade = mask.count_ones();
            let spatial = (mask & 7).count_ones();
            let rev = if (grade * grade.saturating_sub(1) / 2) % 2 == 1 { -1.0 } else { 1.0 };
            let neg = if spatial % 2 == 1 { -1.0 } else { 1.0 };
            *c *= rev * neg;
        }
        Multivector { blades: out }
    }

    /// Image of a quaternion under the embedding `e1 ↦ e2e3, e2 ↦ e3e1, e3 ↦ e1e2`,
    /// which commutes with `f` and `f†` and acts on vectors by the same rotation as
    /// the Hamilton sandwich `a x ā`.
    pub fn from_quaternion(q: &Quaternion) -> Multivector {
        let mut m = Self::zero();
        m.blades[0] = q.w;
        m.blades[0b110] = q.v[0];
        m.blades[0b101] = -q.v[1];
        m.blades[0b011] = q.v[2];
        m
    }
}

/// Left multiplication by a grade-one element `k1 e1 + … + k5 e5` (blade coordinates).
/// Every kernel in this crate lives in that subspace.
#[inline]
pub fn left_mul_grade_one(k: &[f64; 5], m: &Multivector, out: &mut Multivector) {
    let t = table();
    for (i, &ki) in k.iter().enumerate() {
        if ki == 0.0 {
            continue;
        }
        let a = 1usize << i;
        let row = &t.sign[a];
        for (b, &y) in m.blades.iter().enumerate() {
            if y != 0.0 {
                out.blades[a ^ b] += row[b] * ki * y;
            }
        }
    }
}

/// Adjoint of `left_mul_grade_one` in the blade-coordinate inner product.
#[inline]
pub fn left_mul_grade_one_transpose(k: &[f64; 5], m: &Multivector, out: &mut Multivector) {
    let mut kt = *k;
    for (i, c) in kt.iter_mut().enumerate() {
        *c *= METRIC[i];
    }
    left_mul_grade_one(&kt, m, out);
}

/// Euclidean inner product of blade coordinates.
pub fn blade_dot(a: &Multivector, b: &Multivector) -> f64 {
    a.blades.iter().zip(b.blades.iter()).map(|(x, y)| x * y).sum()
}

impl Add for Multivector {
    type Output = Multivector;
    fn add(mut self, rhs: Multivector) -> Multivector {
        self += rhs;
        self
    }
}

impl AddAssign for Multivector {
    fn add_assign(&mut self, rhs: Multivector) {
        for (a, b) in self.blades.iter_mut().zip(rhs.blades.iter()) {
            *a += b;
        }
    }
}

impl Sub for Multivector {
    type Output = Multivector;
    fn sub(mut self, rhs: Multivector) -> Multivector {
        self -= rhs;
        self
    }
}

impl SubAssign for Multivector {
    fn sub_assign(&mut self, rhs: Multivector) {
        for (a, b) in self.blades.iter_mut().zip(rhs.blades.iter()) {
            *a -= b;
        }
    }
}

impl Neg for Multivector {
    type Output = Multivector;
    fn neg(self) -> Multivector {
        self.scale(-1.0)
    }
}

impl Mul for Multivector {
    type Output = Multivector;
    fn mul(self, rhs: Multivector) -> Multivector {
        self.gp(&rhs)
    }
}

impl Mul<f64> for Multivector {
    type Output = Multivector;
    fn mul(self, rhs: f64) -> Multivector {
        self.scale(rhs)
    }
}

/// Hamilton quaternion `w + v1 e1 + v2 e2 + v3 e3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub v: [f64; 3],
}

impl Quaternion {
    pub const ONE: Quaternion = Quaternion { w: 1.0, v: [0.0; 3] };

    pub fn new(w: f64, v: [f64; 3]) -> Self {
        Self { w, v }
    }

    pub fn pure(v: [f64; 3]) -> Self {
        Self { w: 0.0, v }
    }

    pub fn conj(&self) -> Self {
        Self { w: self.w, v: [-self.v[0], -self.v[1], -self.v[2]] }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + dot(&self.v, &self.v)).sqrt()
    }

    pub fn hamilton(&self, o: &Quaternion) -> Quaternion {
        let c = cross(&self.v, &o.v);
        Quaternion {
            w: self.w * o.w - dot(&self.v, &o.v),
            v: [
                self.w * o.v[0] + o.w * self.v[0] + c[0],
                self.w * o.v[1] + o.w * self.v[1] + c[1],
                self.w * o.v[2] + o.w * self.v[2] + c[2],
            ],
        }
    }
}

/// Hamilton product of two pure quaternions: `(-⟨u, v⟩, u × v)`.
pub fn quat_mul(u: [f64; 3], v: [f64; 3]) -> Quaternion {
    Quaternion { w: -dot(&u, &v), v: cross(&u, &v) }
}

pub fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Unit quaternion acting on space by `x ↦ a x ā`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotor(Quaternion);

impl Rotor {
    pub fn new(a: Quaternion) -> Result<Self, AlgebraError> {
        let n = a.norm();
        if (n - 1.0).abs() > ROTOR_TOL {
            return Err(AlgebraError::NonUnitRotor(n));
        }
        Ok(Self(a))
    }

    /// Normalizes `a`; useful for random rotors.
    pub fn normalized(a: Quaternion) -> Result<Self, AlgebraError> {
        let n = a.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(AlgebraError::NonUnitRotor(n));
        }
        Ok(Self(Quaternion { w: a.w / n, v: [a.v[0] / n, a.v[1] / n, a.v[2] / n] }))
    }

    pub fn identity() -> Self {
        Self(Quaternion::ONE)
    }

    pub fn quaternion(&self) -> Quaternion {
        self.0
    }

    pub fn rotate(&self, x: [f64; 3]) -> [f64; 3] {
        self.0.hamilton(&Quaternion::pure(x)).hamilton(&self.0.conj()).v
    }

    pub fn compose(&self, other: &Rotor) -> Rotor {
        Rotor(self.0.hamilton(&other.0))
    }

    pub fn multivector(&self) -> Multivector {
        Multivector::from_quaternion(&self.0)
    }
}

/// Checked constructor mirroring [`Rotor::rotate`].
pub fn rotate(a: &Quaternion, x: [f64; 3]) -> Result<[f64; 3], AlgebraError> {
    Ok(Rotor::new(*a)?.rotate(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_witt(spatial: usize, w: Witt) -> Multivector {
        let mut c = [0.0; DIM];
        c[witt_index(spatial, w)] = 1.0;
        Multivector::from_witt(&c)
    }

    #[test]
    fn witt_pair_relations() {
        let f = Multivector::f();
        let fd = Multivector::f_dagger();
        assert!(f.gp(&f).is_zero());
        assert!(fd.gp(&fd).is_zero());
        assert_eq!(f.gp(&fd) + fd.gp(&f), Multivector::one());
        for j in 1..=3 {
            let e = Multivector::e(j);
            assert!((e.gp(&f) + f.gp(&e)).is_zero());
            assert!((e.gp(&fd) + fd.gp(&e)).is_zero());
        }
    }

    #[test]
    fn witt_basis_matches_products() {
        // e_A · w built by multiplication agrees with the coordinate convention
        let f = Multivector::f();
        let fd = Multivector::f_dagger();
        let ws = [Multivector::one(), f, fd, f.gp(&fd)];
        for a in 0..8usize {
            let mut ea = Multivector::one();
            for i in 0..3 {
                if a >> i & 1 == 1 {
                    ea = ea.gp(&Multivector::e(i + 1));
                }
            }
            for (wi, w) in ws.iter().enumerate() {
                let wk = [Witt::One, Witt::F, Witt::FDagger, Witt::FFDagger][wi];
                let lhs = ea.gp(w);
                let rhs = basis_witt(a, wk);
                assert!((lhs - rhs).norm() < 1e-15, "A={a} w={wi}");
            }
        }
    }

    #[test]
    fn witt_roundtrip() {
        let mut c = [0.0; DIM];
        for (i, x) in c.iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin();
        }
        let m = Multivector::from_witt(&c);
        let back = m.witt_coeffs();
        for i in 0..DIM {
            assert!((back[i] - c[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_and_vec_part_read_off() {
        let m = Multivector::one() + Multivector::e(1).scale(2.0) + Multivector::f().scale(3.0);
        assert_eq!(m.scalar_part(), 1.0);
        assert_eq!(m.vec_part(), [2.0, 0.0, 0.0]);
        // f† f has Witt scalar coefficient one
        let ff = Multivector::f_dagger().gp(&Multivector::f());
        assert!((ff.scalar_part() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quat_mul_units() {
        assert_eq!(quat_mul([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), Quaternion::new(0.0, [0.0, 0.0, 1.0]));
        assert_eq!(quat_mul([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), Quaternion::new(-1.0, [0.0; 3]));
    }

    #[test]
    fn conjugation_of_generators() {
        assert_eq!(Multivector::e(1).conjugate(), -Multivector::e(1));
        assert!((Multivector::f().conjugate() - Multivector::f()).norm() < 1e-15);
        assert!((Multivector::f_dagger().conjugate() - Multivector::f_dagger()).norm() < 1e-15);
    }

    #[test]
    fn rotate_by_e1() {
        let a = Quaternion::pure([1.0, 0.0, 0.0]);
        assert_eq!(rotate(&a, [1.0, 2.0, 3.0]).unwrap(), [1.0, -2.0, -3.0]);
        assert!(matches!(rotate(&Quaternion::new(2.0, [0.0; 3]), [1.0; 3]), Err(AlgebraError::NonUnitRotor(_))));
    }

    #[test]
    fn embedded_rotor_matches_hamilton_rotation() {
        let a = Rotor::normalized(Quaternion::new(0.3, [-0.7, 0.2, 0.5])).unwrap();
        let x = [0.4, -1.1, 2.0];
        let am = a.multivector();
        let y = am.gp(&Multivector::vector(x)).gp(&am.conjugate());
        let r = a.rotate(x);
        let yv = y.vec_part();
        for i in 0..3 {
            assert!((yv[i] - r[i]).abs() < 1e-14);
        }
        assert!((y - Multivector::vector(r)).norm() < 1e-14);
    }

    #[test]
    fn grade_one_transpose_is_adjoint() {
        let k = [0.3, -1.2, 0.7, 2.0, -0.4];
        let mut x = Multivector::zero();
        let mut y = Multivector::zero();
        for i in 0..DIM {
            x.blades[i] = (i as f64).cos();
            y.blades[i] = (1.7 * i as f64).sin();
        }
        let mut kx = Multivector::zero();
        left_mul_grade_one(&k, &x, &mut kx);
        let mut kty = Multivector::zero();
        left_mul_grade_one_transpose(&k, &y, &mut kty);
        assert!((blade_dot(&kx, &y) - blade_dot(&x, &kty)).abs() < 1e-12);
    }
}
