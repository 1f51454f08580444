//! Cell-averaged kernels on uniform space-time grids.
//!
//! The kernel `E` is integrated exactly (up to Gauss–Legendre error in time)
//! over a source cell of width `h` and a time window. Because the heat kernel
//! factorizes over axes, each integral is a sum of products of one-dimensional
//! factors `F`, `F'`, `F''`, which are either averages over a cell width or
//! point values on a face plane. The `f` part integrates `∂_σ M` in closed form,
//! with `M(σ ≤ 0) = 0`: the distributional point mass of `D⁺Φ` at the origin is
//! thereby included in the window that touches `σ = 0`.
//!
//! Periodized axes sum the one-dimensional factors over lattice images,
//! `Σ_{|m| ≤ M} s^m F(z + m)`, which is the cell average of the truncated
//! Eisenstein series.

use std::f64::consts::PI;
use std::sync::OnceLock;

use libm::{erf, erfc};

use crate::kernels::witt_grade_one;

const GL_POINTS: usize = 24;

/// How a one-dimensional factor samples its axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    /// average over a full cell width
    Cell,
    /// point value on a face plane
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisKind {
    Open,
    /// unit period, images `|m| ≤ images`, sign `(-1)^m` when `anti`
    Periodic {
        images: usize,
        anti: bool,
    },
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn gl() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(GL_POINTS))
}

/// `erf(a) - erf(b)` without cancellation in the tails.
fn erf_diff(a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        erfc(b) - erfc(a)
    } else if a < 0.0 && b < 0.0 {
        erfc(-a) - erfc(-b)
    } else {
        erf(a) - erf(b)
    }
}

/// One-dimensional heat kernel and its first two derivatives in `z`.
#[inline]
fn gauss_1d(z: f64, sigma: f64, k: f64) -> [f64; 3] {
    let p = (k / (4.0 * PI * sigma)).sqrt() * (-k * z * z / (4.0 * sigma)).exp();
    let c = k / (2.0 * sigma);
    [p, -c * z * p, (c * c * z * z - c) * p]
}

/// `F, ∂_z F, ∂_z² F` for a single (non-periodized) axis.
pub fn axis_factor(z: f64, sigma: f64, k: f64, h: f64, ext: Extent) -> [f64; 3] {
    match ext {
        Extent::Point => gauss_1d(z, sigma, k),
        Extent::Cell => {
            let w = (4.0 * sigma / k).sqrt();
            let hi = gauss_1d(z + 0.5 * h, sigma, k);
            let lo = gauss_1d(z - 0.5 * h, sigma, k);
            [0.5 * erf_diff((z + 0.5 * h) / w, (z - 0.5 * h) / w), hi[0] - lo[0], hi[1] - lo[1]]
        }
    }
}

pub fn axis_factor_periodized(z: f64, sigma: f64, k: f64, h: f64, ext: Extent, kind: AxisKind) -> [f64; 3] {
    match kind {
        AxisKind::Open => axis_factor(z, sigma, k, h, ext),
        AxisKind::Periodic { images, anti } => {
            let mut acc = [0.0; 3];
            let m = images as i64;
            for shell in 0..=m {
                let s = if anti && shell % 2 == 1 { -1.0 } else { 1.0 };
                let shifts: &[i64] = if shell == 0 { &[0] } else { &[shell, -shell] };
                for &w in shifts {
                    let v = axis_factor(z + w as f64, sigma, k, h, ext);
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += s * b;
                    }
                }
            }
            acc
        }
    }
}

/// Grid geometry shared by all tables of one operator context.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGeometry {
    pub k: f64,
    pub h: f64,
    pub tau: f64,
    pub n: [usize; 3],
    pub nt: usize,
    pub axes: [AxisKind; 3],
}

/// Dense table of grade-one kernel values indexed by time layer and half-step
/// spatial offsets of fixed parity per axis.
#[derive(Debug, Clone)]
pub struct KernelTable {
    n: [usize; 3],
    parity: [i64; 3],
    len: [usize; 3],
    layers: usize,
    data: Vec<[f64; 5]>,
}

impl KernelTable {
    fn new(n: [usize; 3], parity: [i64; 3], layers: usize) -> Self {
        let len = [0, 1, 2].map(|a| 2 * n[a] + 1 - parity[a] as usize);
        let size = layers * len[0] * len[1] * len[2];
        Self { n, parity, len, layers, data: vec![[0.0; 5]; size] }
    }

    #[inline]
    fn axis_index(&self, a: usize, q: i64) -> usize {
        debug_assert_eq!(q.rem_euclid(2), self.parity[a]);
        ((q + 2 * self.n[a] as i64 - self.parity[a]) / 2) as usize
    }

    #[inline]
    fn offset_of(&self, a: usize, idx: usize) -> i64 {
        2 * idx as i64 + self.parity[a] - 2 * self.n[a] as i64
    }

    /// Flat index for layer `j` and half-step offsets `q` (offset `z = q h / 2`).
    #[inline]
    pub fn index(&self, j: usize, q: [i64; 3]) -> usize {
        let i0 = self.axis_index(0, q[0]);
        let i1 = self.axis_index(1, q[1]);
        let i2 = self.axis_index(2, q[2]);
        ((j * self.len[2] + i2) * self.len[1] + i1) * self.len[0] + i0
    }

    #[inline]
    pub fn get(&self, j: usize, q: [i64; 3]) -> &[f64; 5] {
        &self.data[self.index(j, q)]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> &[f64; 5] {
        &self.data[idx]
    }

    pub fn set(&mut self, j: usize, q: [i64; 3], v: [f64; 5]) {
        let i = self.index(j, q);
        self.data[i] = v;
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Index strides `(layer, axis0, axis1, axis2)`; an offset step of two half-steps
    /// along an axis moves the flat index by one stride.
    pub fn strides(&self) -> [usize; 4] {
        [self.len[0] * self.len[1] * self.len[2], 1, self.len[0], self.len[0] * self.len[1]]
    }
}

impl TableGeometry {
    fn axis_values(&self, a: usize, sigma: f64, ext: Extent, parity: i64, len: usize) -> Vec<[f64; 3]> {
        (0..len)
            .map(|i| {
                let q = 2 * i as i64 + parity - 2 * self.n[a] as i64;
                let z = q as f64 * 0.5 * self.h;
                axis_factor_periodized(z, sigma, self.k, self.h, ext, self.axes[a])
            })
            .collect()
    }

    fn factors(&self, t: &KernelTable, sigma: f64, ext: [Extent; 3]) -> [Vec<[f64; 3]>; 3] {
        [0, 1, 2].map(|a| self.axis_values(a, sigma, ext[a], t.parity[a], t.len[a]))
    }

    /// Kernel integrated over windows `σ ∈ [(j-½)τ, (j+½)τ] ∩ (0, ∞)`, `j = 0..nt`,
    /// and over the source extent `ext`.
    pub fn window_table(&self, ext: [Extent; 3], parity: [i64; 3]) -> KernelTable {
        let mut t = KernelTable::new(self.n, parity, self.nt);
        let (gx, gw) = gl();
        let rk = 1.0 / self.k.sqrt();
        let block = t.len[0] * t.len[1] * t.len[2];
        for j in 0..self.nt {
            let a = ((j as f64 - 0.5) * self.tau).max(0.0);
            let b = (j as f64 + 0.5) * self.tau;
            let (ua, ub) = (a.sqrt(), b.sqrt());
            let mut acc = vec![[0.0f64; 5]; block];
            for (x, w) in gx.iter().zip(gw) {
                let u = 0.5 * (ub - ua) * x + 0.5 * (ub + ua);
                let jac = 0.5 * (ub - ua) * w * 2.0 * u;
                let fs = self.factors(&t, u * u, ext);
                accumulate(&t, &fs, &mut acc, |v, f0, f1, f2| {
                    let m = f0[0] * f1[0] * f2[0];
                    v[0] += jac * f0[1] * f1[0] * f2[0];
                    v[1] += jac * f0[0] * f1[1] * f2[0];
                    v[2] += jac * f0[0] * f1[0] * f2[1];
                    v[4] += jac * m;
                });
            }
            let fb = self.factors(&t, b, ext);
            accumulate(&t, &fb, &mut acc, |v, f0, f1, f2| v[3] += f0[0] * f1[0] * f2[0]);
            if a > 0.0 {
                let fa = self.factors(&t, a, ext);
                accumulate(&t, &fa, &mut acc, |v, f0, f1, f2| v[3] -= f0[0] * f1[0] * f2[0]);
            }
            for (dst, v) in t.data[j * block..(j + 1) * block].iter_mut().zip(&acc) {
                *dst = witt_grade_one([rk * v[0], rk * v[1], rk * v[2]], v[3], v[4]);
            }
        }
        t
    }

    /// Kernel at the single time lag `σ_j = (j+½)τ`, `j = 0..nt`, integrated over `ext`.
    pub fn point_table(&self, ext: [Extent; 3], parity: [i64; 3]) -> KernelTable {
        let mut t = KernelTable::new(self.n, parity, self.nt);
        let rk = 1.0 / self.k.sqrt();
        let rkk = 1.0 / self.k;
        let block = t.len[0] * t.len[1] * t.len[2];
        for j in 0..self.nt {
            let sigma = (j as f64 + 0.5) * self.tau;
            let fs = self.factors(&t, sigma, ext);
            let mut acc = vec![[0.0f64; 5]; block];
            accumulate(&t, &fs, &mut acc, |v, f0, f1, f2| {
                v[0] = f0[1] * f1[0] * f2[0];
                v[1] = f0[0] * f1[1] * f2[0];
                v[2] = f0[0] * f1[0] * f2[1];
                v[3] = rkk * (f0[2] * f1[0] * f2[0] + f0[0] * f1[2] * f2[0] + f0[0] * f1[0] * f2[2]);
                v[4] = f0[0] * f1[0] * f2[0];
            });
            for (dst, v) in t.data[j * block..(j + 1) * block].iter_mut().zip(&acc) {
                *dst = witt_grade_one([rk * v[0], rk * v[1], rk * v[2]], v[3], v[4]);
            }
        }
        t
    }
}

fn accumulate<F>(t: &KernelTable, fs: &[Vec<[f64; 3]>; 3], acc: &mut [[f64; 5]], mut op: F)
where
    F: FnMut(&mut [f64; 5], &[f64; 3], &[f64; 3], &[f64; 3]),
{
    let mut idx = 0;
    for f2 in &fs[2][..t.len[2]] {
        for f1 in &fs[1][..t.len[1]] {
            for f0 in &fs[0][..t.len[0]] {
                op(&mut acc[idx], f0, f1, f2);
                idx += 1;
            }
        }
    }
}

impl KernelTable {
    /// Spatial half-step offsets represented along axis `a`.
    pub fn offsets(&self, a: usize) -> impl Iterator<Item = i64> + '_ {
        (0..self.len[a]).map(move |i| self.offset_of(a, i))
    }
}
