//! Discrete parabolic Dirac calculus on a [`SpaceTimeGrid`]: the difference
//! operator `D⁺`, the Teodorescu transform `T`, the Cauchy transform `F`, the
//! Borel–Pompeiu identity `u = F tr u + T D⁺u` and the Bergman projection.
//!
//! Orientation: `T g(y,t₀) = ∫ E(y-x, t₀-t) g(x,t) dx dt`, so only sources in
//! the past of the target contribute, and
//! `F u(y,t₀) = -∫_∂ E(y-x, t₀-t) dσ u`, with `dσ = (Σ ν_j e_j/√k + ν_t f) dA`.
//! Both integrate the kernel exactly over each source cell or face patch
//! (see [`crate::quadrature`]); the data are taken constant per cell.

mod bergman;

pub use bergman::{bergman_build, bergman_p, bergman_p_transpose, bergman_q, BergmanFactorization};

use thiserror::Error;

use crate::algebra::{left_mul_grade_one, left_mul_grade_one_transpose, Multivector, DIM, METRIC};
use crate::eisenstein::{choose_truncation, EisensteinError, TruncationPlan};
use crate::geometry::{FaceKind, GeometryError, Section, SpaceTimeGrid};
use crate::kernels::{KernelError, KernelSpec};
use crate::quadrature::{AxisKind, Extent, KernelTable, TableGeometry};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("periodized kernel requires a lattice in the domain")]
    MissingLattice,
    #[error("section has {got} values, expected {want}")]
    Size { got: usize, want: usize },
    #[error("Bergman system is numerically singular (smallest singular value {smallest:e}, largest {largest:e}); use lambda > 0")]
    Singular { smallest: f64, largest: f64 },
    #[error("Bergman system with {0} unknowns is too large for dense factorization")]
    TooLarge(usize),
    #[error("factorization was built on a different grid")]
    GridMismatch,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Eisenstein(#[from] EisensteinError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which fundamental solution the integral operators use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    Flat,
    /// lattice-periodized kernel truncated according to the plan
    Periodized(TruncationPlan),
}

/// Treatment of the cell containing the kernel singularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalPolicy {
    /// drop the self-interaction of each cell
    Exclude,
    /// keep the exact cell average of the kernel, including its point mass
    #[default]
    CellAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiracSign {
    Plus,
    Minus,
}

/// Precomputed geometry of one kernel-sum: per-layer lists of `(id, key)`.
#[derive(Debug, Clone)]
struct Stencil {
    by_layer: Vec<Vec<(usize, isize)>>,
}

#[derive(Debug, Clone)]
struct FaceClass {
    table: KernelTable,
    center: isize,
    faces: Stencil,
    /// target keys for cells in this table's index space
    cell_keys: Vec<isize>,
    /// face lag relation: windows (same layer origin) or points from `t = 0`
    initial: bool,
}

#[derive(Debug, Clone)]
pub struct OperatorContext {
    pub grid: SpaceTimeGrid,
    pub kernel: KernelSpec,
    pub kind: KernelKind,
    pub policy: DiagonalPolicy,
    cells: KernelTable,
    cell_center: isize,
    cell_keys: Vec<isize>,
    cell_stencil: Stencil,
    face_classes: Vec<FaceClass>,
}

fn keys_for(table: &KernelTable, idx: [usize; 3]) -> isize {
    let s = table.strides();
    (idx[0] * s[1] + idx[1] * s[2] + idx[2] * s[3]) as isize
}

fn center_for(table: &KernelTable, n: [usize; 3]) -> isize {
    keys_for(table, n)
}

impl OperatorContext {
    pub fn new(
        grid: SpaceTimeGrid,
        kernel: KernelSpec,
        kind: KernelKind,
        policy: DiagonalPolicy,
    ) -> Result<Self, OperatorError> {
        let mut axes = [AxisKind::Open; 3];
        if let KernelKind::Periodized(plan) = kind {
            let lat = grid.spec.lattice.ok_or(OperatorError::MissingLattice)?;
            for (a, ax) in axes.iter_mut().enumerate().take(lat.p()) {
                *ax = AxisKind::Periodic { images: plan.m, anti: lat.antiperiodic(a) };
            }
        }
        let geo = TableGeometry { k: kernel.k(), h: grid.h, tau: grid.tau, n: grid.n, nt: grid.nt, axes };
        let mut cells = geo.window_table([Extent::Cell; 3], [0; 3]);
        if policy == DiagonalPolicy::Exclude {
            cells.set(0, [0; 3], [0.0; 5]);
        }
        let cell_center = center_for(&cells, grid.n);
        let cell_keys: Vec<isize> =
            grid.cells.iter().map(|c| keys_for(&cells, [c.index[0], c.index[1], c.index[2]])).collect();
        let mut by_layer = vec![Vec::new(); grid.nt];
        for (i, c) in grid.cells.iter().enumerate() {
            by_layer[c.index[3]].push((i, cell_keys[i]));
        }
        let cell_stencil = Stencil { by_layer };

        let mut face_classes = Vec::new();
        for axis in 0..3 {
            let members: Vec<usize> = (0..grid.faces.len())
                .filter(|&f| matches!(grid.faces[f].kind, FaceKind::Lateral { axis: a, .. } if a == axis))
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut ext = [Extent::Cell; 3];
            ext[axis] = Extent::Point;
            let mut parity = [0; 3];
            parity[axis] = 1;
            let table = geo.window_table(ext, parity);
            let center = center_for(&table, grid.n);
            let cell_keys = grid.cells.iter().map(|c| keys_for(&table, [c.index[0], c.index[1], c.index[2]])).collect();
            let mut by_layer = vec![Vec::new(); grid.nt];
            for f in members {
                let face = &grid.faces[f];
                let c = &grid.cells[face.cell];
                let mut m = [c.index[0], c.index[1], c.index[2]];
                if let FaceKind::Lateral { outward, .. } = face.kind {
                    // face plane sits at index m (lower side) or m + 1 (upper side)
                    if outward > 0 {
                        m[axis] += 1;
                    }
                }
                by_layer[c.index[3]].push((f, keys_for(&table, m)));
            }
            face_classes.push(FaceClass { table, center, faces: Stencil { by_layer }, cell_keys, initial: false });
        }
        let initial: Vec<usize> = (0..grid.faces.len()).filter(|&f| grid.faces[f].kind == FaceKind::Initial).collect();
        if !initial.is_empty() {
            let table = geo.point_table([Extent::Cell; 3], [0; 3]);
            let center = center_for(&table, grid.n);
            let cell_keys = grid.cells.iter().map(|c| keys_for(&table, [c.index[0], c.index[1], c.index[2]])).collect();
            let list = initial
                .into_iter()
                .map(|f| {
                    let c = &grid.cells[grid.faces[f].cell];
                    (f, keys_for(&table, [c.index[0], c.index[1], c.index[2]]))
                })
                .collect();
            face_classes.push(FaceClass {
                table,
                center,
                faces: Stencil { by_layer: vec![list] },
                cell_keys,
                initial: true,
            });
        }
        Ok(Self { grid, kernel, kind, policy, cells, cell_center, cell_keys, cell_stencil, face_classes })
    }

    /// Flat kernel with cell-averaged diagonal.
    pub fn flat(grid: SpaceTimeGrid, k: f64) -> Result<Self, OperatorError> {
        Self::new(grid, KernelSpec::new(k)?, KernelKind::Flat, DiagonalPolicy::default())
    }

    /// Periodized kernel on the grid's lattice with truncation tolerance `tol`
    /// over the time horizon of the grid.
    pub fn periodized(grid: SpaceTimeGrid, k: f64, tol: f64) -> Result<Self, OperatorError> {
        let spec = KernelSpec::new(k)?;
        let lat = grid.spec.lattice.ok_or(OperatorError::MissingLattice)?;
        let r = (lat.p() as f64).sqrt();
        let plan = choose_truncation(tol, r, grid.spec.t_end, &spec, &lat)?;
        Self::new(grid, spec, KernelKind::Periodized(plan), DiagonalPolicy::default())
    }

    pub fn k(&self) -> f64 {
        self.kernel.k()
    }

    /// Truncation tolerance carried by a periodized kernel, zero otherwise.
    pub fn truncation_tol(&self) -> f64 {
        match self.kind {
            KernelKind::Flat => 0.0,
            KernelKind::Periodized(p) => p.bound,
        }
    }

    fn check(&self, s: &Section, want: usize) -> Result<(), OperatorError> {
        if s.len() != want {
            return Err(OperatorError::Size { got: s.len(), want });
        }
        Ok(())
    }
}

/// Blades that are nonzero somewhere in `vals`.
fn active_blades<'a>(vals: impl Iterator<Item = &'a Multivector>) -> Vec<usize> {
    let mut used = [false; DIM];
    for v in vals {
        for (u, b) in used.iter_mut().zip(v.blades()) {
            *u |= *b != 0.0;
        }
    }
    (0..DIM).filter(|&b| used[b]).collect()
}

fn pack(vals: &[Multivector], blades: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(vals.len() * blades.len());
    for v in vals {
        let b = v.blades();
        out.extend(blades.iter().map(|&i| b[i]));
    }
    out
}

/// Turns five per-generator accumulators into `Σ_i e_i acc_i`.
fn unpack(acc: &[f64], blades: &[usize], transpose: bool) -> Multivector {
    let nc = blades.len();
    let mut out = Multivector::zero();
    for i in 0..5 {
        let mut b = [0.0; DIM];
        let mut any = false;
        for (c, &bl) in blades.iter().enumerate() {
            b[bl] = acc[i * nc + c];
            any |= b[bl] != 0.0;
        }
        if !any {
            continue;
        }
        let mut k = [0.0; 5];
        k[i] = if transpose { METRIC[i] } else { 1.0 };
        left_mul_grade_one(&k, &Multivector::from_blades(b), &mut out);
    }
    out
}

/// Core kernel sum. Forward: `out[t] = Σ_s K(lag, key_t - key_s) v_s` over the
/// source stencil. Transposed: `out[s] = Σ_t K(lag, key_t - key_s)ᵀ v_t`.
#[allow(clippy::too_many_arguments)]
fn kernel_sum(
    table: &KernelTable,
    center: isize,
    outputs: &[(usize, usize, isize)],
    inputs: &Stencil,
    vals: &[f64],
    nc: usize,
    lag: impl Fn(usize, usize) -> Option<usize>,
    transpose: bool,
) -> Vec<Vec<f64>> {
    let stride = table.strides()[0] as isize;
    let mut res = Vec::with_capacity(outputs.len());
    let mut acc = vec![0.0; 5 * nc];
    for &(_, out_layer, out_key) in outputs {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (in_layer, list) in inputs.by_layer.iter().enumerate() {
            let Some(j) = lag(out_layer, in_layer) else { continue };
            let base = j as isize * stride + center;
            for &(id, key) in list {
                let idx = if transpose { base + key - out_key } else { base + out_key - key };
                let kv = table.at(idx as usize);
                let v = &vals[id * nc..(id + 1) * nc];
                for (i, &k) in kv.iter().enumerate() {
                    if k == 0.0 {
                        continue;
                    }
                    let a = &mut acc[i * nc..(i + 1) * nc];
                    for (x, y) in a.iter_mut().zip(v) {
                        *x += k * y;
                    }
                }
            }
        }
        res.push(acc.clone());
    }
    res
}

fn forward_lag(out_layer: usize, in_layer: usize) -> Option<usize> {
    out_layer.checked_sub(in_layer)
}

fn backward_lag(out_layer: usize, in_layer: usize) -> Option<usize> {
    in_layer.checked_sub(out_layer)
}

fn all_cells(grid: &SpaceTimeGrid) -> Vec<usize> {
    (0..grid.cells.len()).collect()
}

/// Teodorescu transform evaluated at `targets` (all cells when `None`);
/// other entries of the result are zero.
pub fn teodorescu(s: &Section, ctx: &OperatorContext, targets: Option<&[usize]>) -> Result<Section, OperatorError> {
    ctx.check(s, ctx.grid.cells.len())?;
    let owned;
    let targets = match targets {
        Some(t) => t,
        None => {
            owned = all_cells(&ctx.grid);
            &owned
        }
    };
    let mut out = Section::zeros(s.len());
    let blades = active_blades(s.values.iter());
    if blades.is_empty() {
        return Ok(out);
    }
    let vals = pack(&s.values, &blades);
    let outputs: Vec<_> = targets.iter().map(|&t| (t, ctx.grid.cells[t].index[3], ctx.cell_keys[t])).collect();
    let acc =
        kernel_sum(&ctx.cells, ctx.cell_center, &outputs, &ctx.cell_stencil, &vals, blades.len(), forward_lag, false);
    for (&(t, _, _), a) in outputs.iter().zip(&acc) {
        out.values[t] = unpack(a, &blades, false);
    }
    Ok(out)
}

/// Adjoint of [`teodorescu`] (over all targets) in the blade inner product.
pub fn teodorescu_transpose(s: &Section, ctx: &OperatorContext) -> Result<Section, OperatorError> {
    ctx.check(s, ctx.grid.cells.len())?;
    let mut out = Section::zeros(s.len());
    let blades = active_blades(s.values.iter());
    if blades.is_empty() {
        return Ok(out);
    }
    let vals = pack(&s.values, &blades);
    let outputs: Vec<_> = (0..s.len()).map(|t| (t, ctx.grid.cells[t].index[3], ctx.cell_keys[t])).collect();
    let acc =
        kernel_sum(&ctx.cells, ctx.cell_center, &outputs, &ctx.cell_stencil, &vals, blades.len(), backward_lag, true);
    for (&(t, _, _), a) in outputs.iter().zip(&acc) {
        out.values[t] = unpack(a, &blades, true);
    }
    Ok(out)
}

/// Cauchy transform of boundary data (one value per face) at `targets`.
pub fn cauchy(trace: &Section, ctx: &OperatorContext, targets: Option<&[usize]>) -> Result<Section, OperatorError> {
    let grid = &ctx.grid;
    ctx.check(trace, grid.faces.len())?;
    let owned;
    let targets = match targets {
        Some(t) => t,
        None => {
            owned = all_cells(grid);
            &owned
        }
    };
    let mut weighted = Section::zeros(trace.len());
    for ((w, f), u) in weighted.values.iter_mut().zip(&grid.faces).zip(&trace.values) {
        let wt = f.unit_weight(ctx.k()).map(|c| -c);
        left_mul_grade_one(&wt, u, w);
    }
    let mut out = Section::zeros(grid.cells.len());
    let blades = active_blades(weighted.values.iter());
    if blades.is_empty() {
        return Ok(out);
    }
    let vals = pack(&weighted.values, &blades);
    for class in &ctx.face_classes {
        let outputs: Vec<_> = targets.iter().map(|&t| (t, grid.cells[t].index[3], class.cell_keys[t])).collect();
        let acc = if class.initial {
            kernel_sum(&class.table, class.center, &outputs, &class.faces, &vals, blades.len(), |o, _| Some(o), false)
        } else {
            kernel_sum(&class.table, class.center, &outputs, &class.faces, &vals, blades.len(), forward_lag, false)
        };
        for (&(t, _, _), a) in outputs.iter().zip(&acc) {
            out.values[t] += unpack(a, &blades, false);
        }
    }
    Ok(out)
}

/// Adjoint of [`cauchy`] (over all targets): cells to faces.
pub fn cauchy_transpose(s: &Section, ctx: &OperatorContext) -> Result<Section, OperatorError> {
    let grid = &ctx.grid;
    ctx.check(s, grid.cells.len())?;
    let mut out = Section::zeros(grid.faces.len());
    let blades = active_blades(s.values.iter());
    if blades.is_empty() {
        return Ok(out);
    }
    let vals = pack(&s.values, &blades);
    let mut by_layer = vec![Vec::new(); grid.nt];
    for class in &ctx.face_classes {
        for l in by_layer.iter_mut() {
            l.clear();
        }
        for (i, c) in grid.cells.iter().enumerate() {
            by_layer[c.index[3]].push((i, class.cell_keys[i]));
        }
        let cells = Stencil { by_layer: by_layer.clone() };
        let outputs: Vec<_> = class
            .faces
            .by_layer
            .iter()
            .enumerate()
            .flat_map(|(l, list)| list.iter().map(move |&(f, key)| (f, l, key)))
            .collect();
        let acc = if class.initial {
            kernel_sum(&class.table, class.center, &outputs, &cells, &vals, blades.len(), |_, i| Some(i), true)
        } else {
            kernel_sum(&class.table, class.center, &outputs, &cells, &vals, blades.len(), backward_lag, true)
        };
        for (&(f, _, _), a) in outputs.iter().zip(&acc) {
            let ktu = unpack(a, &blades, true);
            let wt = grid.faces[f].unit_weight(ctx.k()).map(|c| -c);
            left_mul_grade_one_transpose(&wt, &ktu, &mut out.values[f]);
        }
    }
    Ok(out)
}

fn derivative(grid: &SpaceTimeGrid, s: &Section, c: usize, axis: usize) -> Multivector {
    let mut out = Multivector::zero();
    for ((cell, sign), w) in stencil_weights(grid, c, axis) {
        out.axpy(w * sign, &s.values[cell]);
    }
    out
}

fn time_derivative(grid: &SpaceTimeGrid, s: &Section, c: usize) -> Multivector {
    let tau = grid.tau;
    match (grid.step_time(c, -1), grid.step_time(c, 1)) {
        (Some(m), _) => (s.values[c] - s.values[m]) * (1.0 / tau),
        (None, Some(p)) => (s.values[p] - s.values[c]) * (1.0 / tau),
        (None, None) => Multivector::zero(),
    }
}

/// `D± s = (1/√k) Σ e_j ∂_j s + f ∂_t s ± f† s` with central differences in
/// space (second-order one-sided at open boundaries, wrapped on periodic axes)
/// and backward differences in time.
pub fn apply_dirac(s: &Section, ctx: &OperatorContext, sign: DiracSign) -> Result<Section, OperatorError> {
    let grid = &ctx.grid;
    ctx.check(s, grid.cells.len())?;
    let rk = 1.0 / ctx.k().sqrt();
    let f = Multivector::f();
    let fd = Multivector::f_dagger();
    let mass = match sign {
        DiracSign::Plus => 1.0,
        DiracSign::Minus => -1.0,
    };
    let mut out = Section::zeros(s.len());
    for c in 0..s.len() {
        let mut v = Multivector::zero();
        for axis in 0..3 {
            let mut k = [0.0; 5];
            k[axis] = rk;
            left_mul_grade_one(&k, &derivative(grid, s, c, axis), &mut v);
        }
        v += f.gp(&time_derivative(grid, s, c));
        v += fd.gp(&s.values[c]) * mass;
        out.values[c] = v;
    }
    Ok(out)
}

/// Gradient `Σ e_j ∂_j p` of the scalar part of `p`.
pub fn grad(p: &Section, grid: &SpaceTimeGrid) -> Section {
    let sc = p.map(|v| Multivector::scalar(v.scalar_part()));
    Section {
        values: (0..p.len())
            .map(|c| {
                let d = [0, 1, 2].map(|a| derivative(grid, &sc, c, a).scalar_part());
                Multivector::vector(d)
            })
            .collect(),
    }
}

/// Divergence of the vector part.
pub fn div(u: &Section, grid: &SpaceTimeGrid) -> Section {
    let v = u.map(|m| Multivector::vector(m.vec_part()));
    Section {
        values: (0..u.len())
            .map(|c| Multivector::scalar((0..3).map(|a| derivative(grid, &v, c, a).vec_part()[a]).sum()))
            .collect(),
    }
}

/// Curl of the vector part.
pub fn rot(u: &Section, grid: &SpaceTimeGrid) -> Section {
    let v = u.map(|m| Multivector::vector(m.vec_part()));
    Section {
        values: (0..u.len())
            .map(|c| {
                let d = [0, 1, 2].map(|a| derivative(grid, &v, c, a).vec_part());
                Multivector::vector([d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]])
            })
            .collect(),
    }
}

/// Directional derivative `(u · grad) w` of the vector part of `w`.
pub fn advect(u: &Section, w: &Section, grid: &SpaceTimeGrid) -> Section {
    let wv = w.map(|m| Multivector::vector(m.vec_part()));
    Section {
        values: (0..u.len())
            .map(|c| {
                let uc = u.values[c].vec_part();
                let mut r = Multivector::zero();
                for (a, ua) in uc.iter().enumerate() {
                    if *ua != 0.0 {
                        r += derivative(grid, &wv, c, a) * *ua;
                    }
                }
                r
            })
            .collect(),
    }
}

/// Adjoint of [`grad`] in the blade inner product.
pub fn grad_transpose(v: &Section, grid: &SpaceTimeGrid) -> Section {
    let mut out = Section::zeros(v.len());
    let mut acc = vec![0.0; v.len()];
    for c in 0..v.len() {
        let b = v.values[c].blades();
        for (axis, va) in [b[1], b[2], b[4]].iter().enumerate() {
            if *va == 0.0 {
                continue;
            }
            for ((cell, sign), w) in stencil_weights(grid, c, axis) {
                acc[cell] += w * sign * va;
            }
        }
    }
    // grad reads the Witt scalar coordinate, which spans two blades
    for (o, a) in out.values.iter_mut().zip(acc) {
        let mut b = [0.0; DIM];
        b[0] = a;
        b[24] = a;
        *o = Multivector::from_blades(b);
    }
    out
}

/// Weights `(cell, sign), w` of the first-derivative stencil at `c`.
fn stencil_weights(grid: &SpaceTimeGrid, c: usize, axis: usize) -> Vec<((usize, f64), f64)> {
    let h = grid.h;
    let at = |d: i64| grid.step(c, axis, d).map(|n| (n.cell, n.sign));
    let me = (c, 1.0);
    match (at(-1), at(1)) {
        (Some(m), Some(p)) => vec![(p, 0.5 / h), (m, -0.5 / h)],
        (None, Some(p)) => match at(2) {
            Some(p2) => vec![(me, -1.5 / h), (p, 2.0 / h), (p2, -0.5 / h)],
            None => vec![(p, 1.0 / h), (me, -1.0 / h)],
        },
        (Some(m), None) => match at(-2) {
            Some(m2) => vec![(me, 1.5 / h), (m, -2.0 / h), (m2, 0.5 / h)],
            None => vec![(me, 1.0 / h), (m, -1.0 / h)],
        },
        (None, None) => Vec::new(),
    }
}

/// `‖F tr u + T D⁺u - u‖` over the one-cell margin, with `trace` the exact
/// boundary values of `u`; also returned relative to `‖u‖` on the same cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub absolute: f64,
    pub relative: f64,
}

pub fn borel_pompeiu_residual(u: &Section, trace: &Section, ctx: &OperatorContext) -> Result<Residual, OperatorError> {
    let du = apply_dirac(u, ctx, DiracSign::Plus)?;
    let margin = ctx.grid.interior_margin();
    let t = teodorescu(&du, ctx, Some(&margin))?;
    let f = cauchy(trace, ctx, Some(&margin))?;
    let r = f.add(&t).sub(u);
    Ok(margin_residual(&r, u, &margin, ctx.grid.cell_volume()))
}

pub(crate) fn margin_residual(r: &Section, u: &Section, margin: &[usize], vol: f64) -> Residual {
    let a = r.norm_on(margin);
    let b = u.norm_on(margin);
    Residual { absolute: a * vol.sqrt(), relative: if b > 0.0 { a / b } else { a } }
}

/// `‖D⁺ T g - g‖ / ‖g‖` over the one-cell margin.
pub fn right_inverse_residual(g: &Section, ctx: &OperatorContext) -> Result<Residual, OperatorError> {
    let tg = teodorescu(g, ctx, None)?;
    let dtg = apply_dirac(&tg, ctx, DiracSign::Plus)?;
    let margin = ctx.grid.interior_margin();
    Ok(margin_residual(&dtg.sub(g), g, &margin, ctx.grid.cell_volume()))
}

#[cfg(test)]
mod tests;
