//! Bergman projection `P = F (tr T F)⁺ tr T` onto discrete monogenic
//! sections and its complement `Q = I - P`.
//!
//! `tr T F` is not invertible on causal grids (data on the final face never
//! reaches the interior), so the inverse is a truncated-SVD pseudo-inverse:
//! singular values at or below `λ = lambda_rel · σ_max` are discarded.
//! On a full 3-torus the system is block-circulant in space and is
//! diagonalized mode by mode with a discrete Fourier transform; other grids
//! are assembled densely.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};

use super::{cauchy, cauchy_transpose, teodorescu, teodorescu_transpose, OperatorContext, OperatorError};
use crate::algebra::{Multivector, DIM};
use crate::geometry::{trace, trace_adjoint, FaceKind, Section};

/// Largest dense system (unknowns) assembled explicitly.
pub const DENSE_LIMIT: usize = 4096;

type C64 = Complex<f64>;

#[derive(Debug, Clone)]
pub struct BergmanFactorization {
    /// absolute singular-value cutoff
    pub lambda: f64,
    pub sigma_max: f64,
    /// smallest retained singular value
    pub sigma_min_kept: f64,
    pub rank: usize,
    pub unknowns: usize,
    /// `σ_max / σ_min_kept`
    pub condition: f64,
    solver: Solver,
    cells: usize,
    faces: usize,
}

#[derive(Debug, Clone)]
enum Solver {
    Dense { pinv: DMatrix<f64>, targets: Vec<usize> },
    Circulant(Circulant),
}

#[derive(Debug, Clone)]
struct Circulant {
    n: [usize; 3],
    shift: [f64; 3],
    first: Vec<usize>,
    last: Vec<usize>,
    initial_faces: Vec<usize>,
    /// per mode, row-major `DIM × 2 DIM` pseudo-inverse
    pinv: Vec<Vec<C64>>,
}

fn truncation(sigmas: &[f64], lambda_rel: f64, unknowns: usize) -> Result<(f64, f64), OperatorError> {
    let smax = sigmas.iter().cloned().fold(0.0, f64::max);
    let smin = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_rel == 0.0 {
        if !(smin > unknowns as f64 * f64::EPSILON * smax) {
            return Err(OperatorError::Singular { smallest: smin, largest: smax });
        }
        return Ok((0.0, smax));
    }
    Ok((lambda_rel * smax, smax))
}

/// Assembles and factorizes `tr T F`. `lambda_rel` scales the cutoff with the
/// largest singular value; zero requests an exact inverse.
pub fn bergman_build(ctx: &OperatorContext, lambda_rel: f64) -> Result<BergmanFactorization, OperatorError> {
    let grid = &ctx.grid;
    let full_torus = grid.spec.lattice.is_some_and(|l| l.p() == 3) && grid.spec.mask.is_none();
    if full_torus {
        build_circulant(ctx, lambda_rel)
    } else {
        build_dense(ctx, lambda_rel)
    }
}

fn face_targets(ctx: &OperatorContext) -> Vec<usize> {
    let mut t: Vec<usize> = ctx.grid.faces.iter().map(|f| f.cell).collect();
    t.sort_unstable();
    t.dedup();
    t
}

fn build_dense(ctx: &OperatorContext, lambda_rel: f64) -> Result<BergmanFactorization, OperatorError> {
    let grid = &ctx.grid;
    let nf = grid.faces.len();
    let dim = DIM * nf;
    if dim > DENSE_LIMIT {
        return Err(OperatorError::TooLarge(dim));
    }
    let targets = face_targets(ctx);
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut unit = Section::zeros(nf);
    for f in 0..nf {
        for b in 0..DIM {
            let mut e = [0.0; DIM];
            e[b] = 1.0;
            unit.values[f] = Multivector::from_blades(e);
            let fu = cauchy(&unit, ctx, None)?;
            let tfu = teodorescu(&fu, ctx, Some(&targets))?;
            let col = trace(grid, &tfu);
            for (g, v) in col.values.iter().enumerate() {
                for (c, x) in v.blades().iter().enumerate() {
                    a[(g * DIM + c, f * DIM + b)] = *x;
                }
            }
            unit.values[f] = Multivector::zero();
        }
    }
    let svd = a.svd(true, true);
    let sig: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let (lambda, smax) = truncation(&sig, lambda_rel, dim)?;
    let u = svd.u.expect("left singular vectors");
    let vt = svd.v_t.expect("right singular vectors");
    let mut pinv = DMatrix::<f64>::zeros(dim, dim);
    let mut rank = 0;
    let mut kept_min = f64::INFINITY;
    for (i, &s) in sig.iter().enumerate() {
        if s <= lambda || s == 0.0 {
            continue;
        }
        rank += 1;
        kept_min = kept_min.min(s);
        let vi = vt.row(i).transpose();
        let ui = u.column(i);
        pinv += (vi * ui.transpose()) * (1.0 / s);
    }
    Ok(BergmanFactorization {
        lambda,
        sigma_max: smax,
        sigma_min_kept: kept_min,
        rank,
        unknowns: dim,
        condition: smax / kept_min,
        solver: Solver::Dense { pinv, targets },
        cells: grid.cells.len(),
        faces: nf,
    })
}

fn spatial_index(n: [usize; 3], i: [usize; 3]) -> usize {
    (i[2] * n[1] + i[1]) * n[0] + i[0]
}

/// Separable DFT over the spatial grid with half-integer shifted modes on
/// antiperiodic axes; `sign = -1` forward, `+1` inverse (unnormalized).
fn dft3(data: &mut [C64], n: [usize; 3], shift: [f64; 3], width: usize, sign: f64) {
    let mut buf = Vec::new();
    for axis in 0..3 {
        let m = n[axis];
        let stride = match axis {
            0 => 1,
            1 => n[0],
            _ => n[0] * n[1],
        };
        let mut tw = vec![C64::new(0.0, 0.0); m * m];
        for (o, row) in tw.chunks_mut(m).enumerate() {
            for (i, w) in row.iter_mut().enumerate() {
                // the shift always sits on the frequency index
                let (xi, s) = if sign < 0.0 { (o, i) } else { (i, o) };
                let ang = sign * 2.0 * PI * (xi as f64 + shift[axis]) * s as f64 / m as f64;
                *w = C64::new(ang.cos(), ang.sin());
            }
        }
        let total = n[0] * n[1] * n[2];
        for start in 0..total {
            if (start / stride) % m != 0 {
                continue;
            }
            buf.clear();
            for s in 0..m {
                let o = (start + s * stride) * width;
                buf.extend_from_slice(&data[o..o + width]);
            }
            for xi in 0..m {
                let o = (start + xi * stride) * width;
                let dst = &mut data[o..o + width];
                dst.iter_mut().for_each(|d| *d = C64::new(0.0, 0.0));
                for s in 0..m {
                    let w = tw[xi * m + s];
                    let src = &buf[s * width..(s + 1) * width];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += w * v;
                    }
                }
            }
        }
    }
}

fn build_circulant(ctx: &OperatorContext, lambda_rel: f64) -> Result<BergmanFactorization, OperatorError> {
    let grid = &ctx.grid;
    let lat = grid.spec.lattice.expect("torus lattice");
    let n = grid.n;
    let ns = n[0] * n[1] * n[2];
    let shift = [0, 1, 2].map(|a| if lat.antiperiodic(a) { 0.5 } else { 0.0 });
    let mut first = vec![0; ns];
    let mut last = vec![0; ns];
    let mut initial_faces = vec![0; ns];
    for (c, cell) in grid.cells.iter().enumerate() {
        let s = spatial_index(n, [cell.index[0], cell.index[1], cell.index[2]]);
        if cell.index[3] == 0 {
            first[s] = c;
        }
        if cell.index[3] + 1 == grid.nt {
            last[s] = c;
        }
    }
    for (f, face) in grid.faces.iter().enumerate() {
        if face.kind == FaceKind::Initial {
            let cell = &grid.cells[face.cell];
            initial_faces[spatial_index(n, [cell.index[0], cell.index[1], cell.index[2]])] = f;
        }
    }
    let mut targets: Vec<usize> = first.iter().chain(&last).cloned().collect();
    targets.sort_unstable();
    targets.dedup();

    // impulse responses: column b of the blocks for source at spatial index 0
    let w2 = 2 * DIM;
    let mut kern = vec![C64::new(0.0, 0.0); ns * w2 * DIM];
    let mut unit = Section::zeros(grid.faces.len());
    for b in 0..DIM {
        let mut e = [0.0; DIM];
        e[b] = 1.0;
        unit.values[initial_faces[0]] = Multivector::from_blades(e);
        let fu = cauchy(&unit, ctx, None)?;
        let tfu = teodorescu(&fu, ctx, Some(&targets))?;
        for s in 0..ns {
            let top = tfu.values[first[s]].blades();
            let bottom = tfu.values[last[s]].blades();
            for r in 0..DIM {
                kern[(s * w2 + r) * DIM + b] = C64::new(top[r], 0.0);
                kern[(s * w2 + DIM + r) * DIM + b] = C64::new(bottom[r], 0.0);
            }
        }
    }
    dft3(&mut kern, n, shift, w2 * DIM, -1.0);

    let mut svds = Vec::with_capacity(ns);
    let mut all = Vec::with_capacity(ns * DIM);
    for s in 0..ns {
        let m = DMatrix::<C64>::from_row_slice(w2, DIM, &kern[s * w2 * DIM..(s + 1) * w2 * DIM]);
        let svd = m.svd(true, true);
        all.extend(svd.singular_values.iter().cloned());
        svds.push(svd);
    }
    let (lambda, smax) = truncation(&all, lambda_rel, ns * DIM)?;
    let mut rank = 0;
    let mut kept_min = f64::INFINITY;
    let mut pinv = Vec::with_capacity(ns);
    for svd in svds {
        let u = svd.u.expect("left singular vectors");
        let vt = svd.v_t.expect("right singular vectors");
        let mut p = DMatrix::<C64>::zeros(DIM, w2);
        for (i, &sv) in svd.singular_values.iter().enumerate() {
            if sv <= lambda || sv == 0.0 {
                continue;
            }
            rank += 1;
            kept_min = kept_min.min(sv);
            let v = vt.row(i).adjoint();
            let ui = u.column(i).adjoint();
            p += (v * ui).scale(1.0 / sv);
        }
        let mut row_major = Vec::with_capacity(DIM * w2);
        for r in 0..DIM {
            for c in 0..w2 {
                row_major.push(p[(r, c)]);
            }
        }
        pinv.push(row_major);
    }
    Ok(BergmanFactorization {
        lambda,
        sigma_max: smax,
        sigma_min_kept: kept_min,
        rank,
        unknowns: ns * DIM,
        condition: smax / kept_min,
        solver: Solver::Circulant(Circulant { n, shift, first, last, initial_faces, pinv }),
        cells: grid.cells.len(),
        faces: grid.faces.len(),
    })
}

impl Circulant {
    /// Applies the pseudo-inverse (or its transpose) to stacked spatial fields.
    fn apply(&self, input: &[C64], width_in: usize, transpose: bool) -> Vec<C64> {
        let ns = self.n[0] * self.n[1] * self.n[2];
        let width_out = if transpose { 2 * DIM } else { DIM };
        let mut x = input.to_vec();
        dft3(&mut x, self.n, self.shift, width_in, -1.0);
        let mut y = vec![C64::new(0.0, 0.0); ns * width_out];
        for s in 0..ns {
            let p = &self.pinv[s];
            let xin = &x[s * width_in..(s + 1) * width_in];
            let yout = &mut y[s * width_out..(s + 1) * width_out];
            if transpose {
                for r in 0..DIM {
                    for c in 0..2 * DIM {
                        yout[c] += p[r * 2 * DIM + c].conj() * xin[r];
                    }
                }
            } else {
                for r in 0..DIM {
                    let row = &p[r * 2 * DIM..(r + 1) * 2 * DIM];
                    yout[r] = row.iter().zip(xin).map(|(a, b)| a * b).sum();
                }
            }
        }
        dft3(&mut y, self.n, self.shift, width_out, 1.0);
        let scale = 1.0 / ns as f64;
        y.iter_mut().for_each(|v| *v *= scale);
        y
    }
}

impl BergmanFactorization {
    fn check(&self, ctx: &OperatorContext) -> Result<(), OperatorError> {
        if ctx.grid.cells.len() != self.cells || ctx.grid.faces.len() != self.faces {
            return Err(OperatorError::GridMismatch);
        }
        Ok(())
    }

    /// `(tr T F)⁺ y` for face data `y`.
    pub fn solve(&self, y: &Section, ctx: &OperatorContext) -> Result<Section, OperatorError> {
        self.check(ctx)?;
        let grid = &ctx.grid;
        match &self.solver {
            Solver::Dense { pinv, .. } => {
                let v = flatten(y);
                let x = pinv * v;
                Ok(unflatten(&x, y.len()))
            }
            Solver::Circulant(c) => {
                let ns = c.first.len();
                let mut input = vec![C64::new(0.0, 0.0); ns * 2 * DIM];
                let mut fidx = vec![usize::MAX; grid.cells.len()];
                let mut lidx = vec![usize::MAX; grid.cells.len()];
                for s in 0..ns {
                    fidx[c.first[s]] = s;
                    lidx[c.last[s]] = s;
                }
                for (f, face) in grid.faces.iter().enumerate() {
                    let (s, off) = match face.kind {
                        FaceKind::Initial => (fidx[face.cell], 0),
                        FaceKind::Final => (lidx[face.cell], DIM),
                        FaceKind::Lateral { .. } => continue,
                    };
                    for (r, v) in y.values[f].blades().iter().enumerate() {
                        input[s * 2 * DIM + off + r] = C64::new(*v, 0.0);
                    }
                }
                let x = c.apply(&input, 2 * DIM, false);
                let mut out = Section::zeros(grid.faces.len());
                for s in 0..ns {
                    let mut b = [0.0; DIM];
                    for (r, v) in b.iter_mut().enumerate() {
                        *v = x[s * DIM + r].re;
                    }
                    out.values[c.initial_faces[s]] = Multivector::from_blades(b);
                }
                Ok(out)
            }
        }
    }

    /// `((tr T F)⁺)ᵀ z` for face data `z`.
    pub fn solve_transpose(&self, z: &Section, ctx: &OperatorContext) -> Result<Section, OperatorError> {
        self.check(ctx)?;
        let grid = &ctx.grid;
        match &self.solver {
            Solver::Dense { pinv, .. } => {
                let x = pinv.transpose() * flatten(z);
                Ok(unflatten(&x, z.len()))
            }
            Solver::Circulant(c) => {
                let ns = c.first.len();
                let mut input = vec![C64::new(0.0, 0.0); ns * DIM];
                for s in 0..ns {
                    for (r, v) in z.values[c.initial_faces[s]].blades().iter().enumerate() {
                        input[s * DIM + r] = C64::new(*v, 0.0);
                    }
                }
                let x = c.apply(&input, DIM, true);
                let mut out = Section::zeros(grid.faces.len());
                for (f, face) in grid.faces.iter().enumerate() {
                    let cell = &grid.cells[face.cell];
                    let s = spatial_index(c.n, [cell.index[0], cell.index[1], cell.index[2]]);
                    let off = match face.kind {
                        FaceKind::Initial => 0,
                        FaceKind::Final => DIM,
                        FaceKind::Lateral { .. } => continue,
                    };
                    let mut b = [0.0; DIM];
                    for (r, v) in b.iter_mut().enumerate() {
                        *v = x[s * 2 * DIM + off + r].re;
                    }
                    out.values[f] = Multivector::from_blades(b);
                }
                Ok(out)
            }
        }
    }

    fn trace_targets(&self, ctx: &OperatorContext) -> Vec<usize> {
        match &self.solver {
            Solver::Dense { targets, .. } => targets.clone(),
            Solver::Circulant(_) => face_targets(ctx),
        }
    }
}

fn flatten(s: &Section) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(s.len() * DIM, s.values.iter().flat_map(|v| v.blades().iter().cloned()))
}

fn unflatten(x: &nalgebra::DVector<f64>, len: usize) -> Section {
    Section {
        values: (0..len)
            .map(|i| {
                let mut b = [0.0; DIM];
                b.copy_from_slice(&x.as_slice()[i * DIM..(i + 1) * DIM]);
                Multivector::from_blades(b)
            })
            .collect(),
    }
}

pub fn bergman_p(s: &Section, fac: &BergmanFactorization, ctx: &OperatorContext) -> Result<Section, OperatorError> {
    let targets = fac.trace_targets(ctx);
    let ts = teodorescu(s, ctx, Some(&targets))?;
    let y = trace(&ctx.grid, &ts);
    let v = fac.solve(&y, ctx)?;
    cauchy(&v, ctx, None)
}

/// Adjoint of [`bergman_p`] in the blade inner product.
pub fn bergman_p_transpose(
    s: &Section,
    fac: &BergmanFactorization,
    ctx: &OperatorContext,
) -> Result<Section, OperatorError> {
    let z = cauchy_transpose(s, ctx)?;
    let v = fac.solve_transpose(&z, ctx)?;
    let cells = trace_adjoint(&ctx.grid, &v);
    teodorescu_transpose(&cells, ctx)
}

pub fn bergman_q(s: &Section, fac: &BergmanFactorization, ctx: &OperatorContext) -> Result<Section, OperatorError> {
    Ok(s.sub(&bergman_p(s, fac, ctx)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_matches_direct_sum() {
        let n = [3, 2, 4];
        let shift = [0.5, 0.0, 0.5];
        let ns = 24;
        let data: Vec<C64> = (0..ns).map(|i| C64::new((i as f64 * 0.7).sin(), 0.0)).collect();
        let mut fast = data.clone();
        dft3(&mut fast, n, shift, 1, -1.0);
        for x0 in 0..3 {
            for x1 in 0..2 {
                for x2 in 0..4 {
                    let mut acc = C64::new(0.0, 0.0);
                    for s0 in 0..3 {
                        for s1 in 0..2 {
                            for s2 in 0..4 {
                                let ang = -2.0
                                    * PI
                                    * ((x0 as f64 + 0.5) * s0 as f64 / 3.0
                                        + x1 as f64 * s1 as f64 / 2.0
                                        + (x2 as f64 + 0.5) * s2 as f64 / 4.0);
                                acc += C64::new(ang.cos(), ang.sin()) * data[spatial_index(n, [s0, s1, s2])];
                            }
                        }
                    }
                    assert!((acc - fast[spatial_index(n, [x0, x1, x2])]).norm() < 1e-12);
                }
            }
        }
        dft3(&mut fast, n, shift, 1, 1.0);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a / ns as f64 - b).norm() < 1e-12);
        }
    }
}
