//! Voxelized space-time domains `G × [0, T]`, with `G` a masked box in `ℝ³`
//! or in a quotient `ℝ³/Ω_p`, their oriented boundary faces, and sections
//! (one multivector per cell or per face).

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::algebra::{Multivector, DIM};
use crate::eisenstein::LatticeSpec;
use crate::kernels::SpaceTimePoint;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("resolution must be at least 2 along every axis, got {0:?}")]
    Resolution([usize; 4]),
    #[error("spatial steps differ between axes: {0:?}")]
    NonUniformStep([f64; 3]),
    #[error("periodic axis {0} must have unit extent")]
    PeriodicExtent(usize),
    #[error("mask has {got} entries, expected {want}")]
    MaskSize { got: usize, want: usize },
    #[error("domain has no interior cells")]
    EmptyInterior,
    #[error("section has {got} values, expected {want}")]
    SectionSize { got: usize, want: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Product domain: static spatial mask times `[0, T]`. The first `p` axes are
/// periodic with unit period when a lattice is given.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub lattice: Option<LatticeSpec>,
    pub extent: [f64; 3],
    pub t_end: f64,
    /// inside flags per spatial cell, `i1` fastest; `None` means the whole box
    pub mask: Option<Vec<bool>>,
}

impl DomainSpec {
    pub fn unit_cube(t_end: f64) -> Self {
        Self { lattice: None, extent: [1.0; 3], t_end, mask: None }
    }

    /// `T_p × [0, T]` with unit periods on the first `p` axes.
    pub fn periodic(lattice: LatticeSpec, t_end: f64) -> Self {
        Self { lattice: Some(lattice), extent: [1.0; 3], t_end, mask: None }
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.lattice.is_some_and(|l| axis < l.p())
    }

    pub fn is_antiperiodic(&self, axis: usize) -> bool {
        self.lattice.is_some_and(|l| axis < l.p() && l.antiperiodic(axis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub n: [usize; 3],
    pub nt: usize,
}

impl Resolution {
    pub fn cubic(n: usize, nt: usize) -> Self {
        Self { n: [n; 3], nt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// `(i1, i2, i3, it)`
    pub index: [usize; 4],
    pub center: SpaceTimePoint,
    pub volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceKind {
    /// spatial face normal to `axis`, outward direction `±1`
    Lateral { axis: usize, outward: i8 },
    /// the `t = 0` face
    Initial,
    /// the `t = T` face
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub center: SpaceTimePoint,
    /// outward unit normal `(ν_x, ν_t)`
    pub normal: [f64; 4],
    pub area: f64,
    /// adjacent interior cell
    pub cell: usize,
    pub kind: FaceKind,
}

impl BoundaryFace {
    /// Surface weight `(Σ ν_j e_j / √k + ν_t f) · area` in blade coordinates.
    pub fn weight(&self, k: f64) -> [f64; 5] {
        self.unit_weight(k).map(|w| w * self.area)
    }

    /// The weight per unit area, `Σ ν_j e_j / √k + ν_t f`.
    pub fn unit_weight(&self, k: f64) -> [f64; 5] {
        let s = 1.0 / k.sqrt();
        let nt = self.normal[3];
        [s * self.normal[0], s * self.normal[1], s * self.normal[2], 0.5 * nt, 0.5 * nt]
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    pub spec: DomainSpec,
    pub h: f64,
    pub tau: f64,
    pub n: [usize; 3],
    pub nt: usize,
    pub cells: Vec<Cell>,
    pub faces: Vec<BoundaryFace>,
    lookup: Vec<Option<usize>>,
}

/// A neighbouring cell together with the sign picked up across an
/// antiperiodic seam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub cell: usize,
    pub sign: f64,
}

pub fn build_grid(spec: &DomainSpec, res: Resolution) -> Result<SpaceTimeGrid, GeometryError> {
    let [n1, n2, n3] = res.n;
    if res.n.iter().any(|&v| v < 2) || res.nt < 2 {
        return Err(GeometryError::Resolution([n1, n2, n3, res.nt]));
    }
    for a in 0..3 {
        if spec.is_periodic(a) && (spec.extent[a] - 1.0).abs() > 1e-12 {
            return Err(GeometryError::PeriodicExtent(a));
        }
    }
    let steps = [0, 1, 2].map(|a| spec.extent[a] / res.n[a] as f64);
    if steps.iter().any(|s| (s - steps[0]).abs() > 1e-12 * steps[0]) {
        return Err(GeometryError::NonUniformStep(steps));
    }
    let nspace = n1 * n2 * n3;
    if let Some(m) = &spec.mask {
        if m.len() != nspace {
            return Err(GeometryError::MaskSize { got: m.len(), want: nspace });
        }
    }
    let inside = |i: usize| spec.mask.as_ref().is_none_or(|m| m[i]);
    let h = steps[0];
    let tau = spec.t_end / res.nt as f64;
    let mut cells = Vec::new();
    let mut lookup = vec![None; nspace * res.nt];
    for it in 0..res.nt {
        for i3 in 0..n3 {
            for i2 in 0..n2 {
                for i1 in 0..n1 {
                    let s = (i3 * n2 + i2) * n1 + i1;
                    if !inside(s) {
                        continue;
                    }
                    lookup[it * nspace + s] = Some(cells.len());
                    let x = [(i1 as f64 + 0.5) * h, (i2 as f64 + 0.5) * h, (i3 as f64 + 0.5) * h];
                    cells.push(Cell {
                        index: [i1, i2, i3, it],
                        center: SpaceTimePoint::new(x, (it as f64 + 0.5) * tau),
                        volume: h * h * h * tau,
                    });
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(GeometryError::EmptyInterior);
    }
    let mut grid = SpaceTimeGrid { spec: spec.clone(), h, tau, n: res.n, nt: res.nt, cells, faces: Vec::new(), lookup };
    let mut faces = Vec::new();
    for (c, cell) in grid.cells.iter().enumerate() {
        for axis in 0..3 {
            for outward in [-1i8, 1] {
                if grid.step(c, axis, outward as i64).is_some() {
                    continue;
                }
                let mut x = cell.center.x;
                x[axis] += 0.5 * h * outward as f64;
                let mut normal = [0.0; 4];
                normal[axis] = outward as f64;
                faces.push(BoundaryFace {
                    center: SpaceTimePoint::new(x, cell.center.t),
                    normal,
                    area: h * h * tau,
                    cell: c,
                    kind: FaceKind::Lateral { axis, outward },
                });
            }
        }
    }
    for (c, cell) in grid.cells.iter().enumerate() {
        let it = cell.index[3];
        let mut push = |t: f64, nt: f64, kind| {
            faces.push(BoundaryFace {
                center: SpaceTimePoint::new(cell.center.x, t),
                normal: [0.0, 0.0, 0.0, nt],
                area: h * h * h,
                cell: c,
                kind,
            })
        };
        if it == 0 {
            push(0.0, -1.0, FaceKind::Initial);
        }
        if it == res.nt - 1 {
            push(spec.t_end, 1.0, FaceKind::Final);
        }
    }
    grid.faces = faces;
    Ok(grid)
}

impl SpaceTimeGrid {
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h * self.tau
    }

    pub fn cell_at(&self, i: [usize; 3], it: usize) -> Option<usize> {
        if i.iter().zip(self.n).any(|(&a, b)| a >= b) || it >= self.nt {
            return None;
        }
        let s = (i[2] * self.n[1] + i[1]) * self.n[0] + i[0];
        self.lookup[it * self.n[0] * self.n[1] * self.n[2] + s]
    }

    /// Cell reached from `c` by `d` steps along spatial `axis`, wrapping on
    /// periodic axes.
    pub fn step(&self, c: usize, axis: usize, d: i64) -> Option<Neighbor> {
        let cell = &self.cells[c];
        let mut i = [cell.index[0], cell.index[1], cell.index[2]];
        let n = self.n[axis] as i64;
        let mut j = i[axis] as i64 + d;
        let mut sign = 1.0;
        if j < 0 || j >= n {
            if !self.spec.is_periodic(axis) {
                return None;
            }
            let wraps = j.div_euclid(n);
            j = j.rem_euclid(n);
            if self.spec.is_antiperiodic(axis) && wraps % 2 != 0 {
                sign = -1.0;
            }
        }
        i[axis] = j as usize;
        self.cell_at(i, cell.index[3]).map(|cell| Neighbor { cell, sign })
    }

    /// Cell `d` layers later (or earlier) in time.
    pub fn step_time(&self, c: usize, d: i64) -> Option<usize> {
        let cell = &self.cells[c];
        let it = cell.index[3] as i64 + d;
        if it < 0 || it >= self.nt as i64 {
            return None;
        }
        self.cell_at([cell.index[0], cell.index[1], cell.index[2]], it as usize)
    }

    /// Cells of time layer `it`, in grid order.
    pub fn layer(&self, it: usize) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(move |(_, c)| c.index[3] == it).map(|(i, _)| i)
    }

    /// Cells with a full one-cell margin to every non-periodic boundary.
    pub fn interior_margin(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&c| {
                let it = self.cells[c].index[3];
                if it == 0 || it + 1 == self.nt {
                    return false;
                }
                (0..3).all(|a| self.step(c, a, 1).is_some() && self.step(c, a, -1).is_some())
            })
            .collect()
    }

    /// Whether no spatial boundary faces exist and the grid is a full box.
    pub fn is_full_box(&self) -> bool {
        self.spec.mask.is_none()
    }
}

/// One multivector per cell (or per boundary face for trace data).
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub values: Vec<Multivector>,
}

impl Section {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![Multivector::zero(); len] }
    }

    pub fn on_cells<F: FnMut(&Cell) -> Multivector>(grid: &SpaceTimeGrid, f: F) -> Self {
        Self { values: grid.cells.iter().map(f).collect() }
    }

    pub fn on_faces<F: FnMut(&BoundaryFace) -> Multivector>(grid: &SpaceTimeGrid, f: F) -> Self {
        Self { values: grid.faces.iter().map(f).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { values: self.values.iter().map(|v| *v * s).collect() }
    }

    pub fn axpy(&mut self, s: f64, other: &Section) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.axpy(s, b);
        }
    }

    pub fn add(&self, other: &Section) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect() }
    }

    pub fn sub(&self, other: &Section) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(a, b)| *a - *b).collect() }
    }

    /// Euclidean product of blade coordinates summed over entries.
    pub fn dot(&self, other: &Section) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| crate::algebra::blade_dot(a, b)).sum()
    }

    /// Root of the summed squared multivector norms.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Norm restricted to the listed entries.
    pub fn norm_on(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.values[i].norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn map<F: FnMut(&Multivector) -> Multivector>(&self, f: F) -> Self {
        Self { values: self.values.iter().map(f).collect() }
    }
}

/// `min_ω ‖(x + ω, t)‖_q` over the lattice; `q = ∞` gives the max-norm.
pub fn torus_norm(p: SpaceTimePoint, lat: &LatticeSpec, q: f64) -> f64 {
    let mut v = [p.x[0], p.x[1], p.x[2], p.t];
    for c in v.iter_mut().take(lat.p()) {
        *c -= c.round();
    }
    if q.is_infinite() {
        v.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    } else {
        v.iter().map(|c| c.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Canonical representative with periodic coordinates in `[0, 1)`.
pub fn project(p: SpaceTimePoint, lat: &LatticeSpec) -> SpaceTimePoint {
    let mut x = p.x;
    for c in x.iter_mut().take(lat.p()) {
        *c = c.rem_euclid(1.0);
        if *c >= 1.0 {
            *c = 0.0;
        }
    }
    SpaceTimePoint::new(x, p.t)
}

/// `(Σ ‖s‖^q · cell volume)^{1/q}`, or the maximum for `q = ∞`.
pub fn lq_norm(grid: &SpaceTimeGrid, s: &Section, q: f64) -> f64 {
    if q.is_infinite() {
        return s.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    }
    let vol = grid.cell_volume();
    (s.values.iter().map(|v| v.norm().powf(q)).sum::<f64>() * vol).powf(1.0 / q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevNorm {
    pub value: f64,
    /// some stencil hit a non-periodic boundary and fell back to one-sided differences
    pub one_sided: bool,
}

/// First difference of `s` along spatial `axis` (0..3) or time (`axis == 3`).
pub fn difference(grid: &SpaceTimeGrid, s: &Section, axis: usize) -> (Section, bool) {
    let step = if axis == 3 { grid.tau } else { grid.h };
    let mut flagged = false;
    let mut out = Section::zeros(s.len());
    for c in 0..grid.cells.len() {
        let nb = |d: i64| -> Option<Neighbor> {
            if axis == 3 {
                grid.step_time(c, d).map(|cell| Neighbor { cell, sign: 1.0 })
            } else {
                grid.step(c, axis, d)
            }
        };
        let v = |n: Neighbor| s.values[n.cell] * n.sign;
        out.values[c] = match (nb(-1), nb(1)) {
            (Some(m), Some(p)) => (v(p) - v(m)) * (0.5 / step),
            (None, Some(p)) => {
                flagged = true;
                (v(p) - s.values[c]) * (1.0 / step)
            }
            (Some(m), None) => {
                flagged = true;
                (s.values[c] - v(m)) * (1.0 / step)
            }
            (None, None) => {
                flagged = true;
                Multivector::zero()
            }
        };
    }
    (out, flagged)
}

/// Discrete `W^{k_x, k_t}_q` norm built from pure central differences.
pub fn sobolev_norm(grid: &SpaceTimeGrid, s: &Section, kx: usize, kt: usize, q: f64) -> SobolevNorm {
    let pow = |v: f64| if q.is_infinite() { v } else { v.powf(q) };
    let mut total = pow(lq_norm(grid, s, q));
    let mut one_sided = false;
    let mut add_axis = |axis: usize, order: usize, total: &mut f64| {
        let mut d = s.clone();
        for _ in 0..order {
            let (next, f) = difference(grid, &d, axis);
            one_sided |= f;
            d = next;
            let v = pow(lq_norm(grid, &d, q));
            if q.is_infinite() {
                *total = total.max(v);
            } else {
                *total += v;
            }
        }
    };
    for axis in 0..3 {
        add_axis(axis, kx, &mut total);
    }
    add_axis(3, kt, &mut total);
    let value = if q.is_infinite() { total } else { total.powf(1.0 / q) };
    SobolevNorm { value, one_sided }
}

/// Nearest-interior-cell trace onto the boundary faces.
pub fn trace(grid: &SpaceTimeGrid, s: &Section) -> Section {
    Section { values: grid.faces.iter().map(|f| s.values[f.cell]).collect() }
}

/// Adjoint of [`trace`]: scatters face values back to their cells.
pub fn trace_adjoint(grid: &SpaceTimeGrid, t: &Section) -> Section {
    let mut out = Section::zeros(grid.cells.len());
    for (f, v) in grid.faces.iter().zip(&t.values) {
        out.values[f.cell] += *v;
    }
    out
}

const CSV_PREFIX: &str = "i1,i2,i3,it,x1,x2,x3,t";

fn csv_header() -> String {
    let mut h = CSV_PREFIX.to_string();
    for i in 0..DIM {
        h.push_str(&format!(",c{i}"));
    }
    h
}

/// Writes a cell section; coefficients are Witt coordinates.
pub fn write_section_csv<W: Write>(grid: &SpaceTimeGrid, s: &Section, mut w: W) -> Result<(), GeometryError> {
    if s.len() != grid.cells.len() {
        return Err(GeometryError::SectionSize { got: s.len(), want: grid.cells.len() });
    }
    writeln!(w, "{}", csv_header())?;
    for (cell, v) in grid.cells.iter().zip(&s.values) {
        let [i1, i2, i3, it] = cell.index;
        let x = cell.center.x;
        write!(w, "{i1},{i2},{i3},{it},{},{},{},{}", x[0], x[1], x[2], cell.center.t)?;
        for c in v.witt_coeffs() {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_section_csv<R: BufRead>(grid: &SpaceTimeGrid, r: R) -> Result<Section, GeometryError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| GeometryError::Csv("empty input".into()))??;
    if header.trim() != csv_header() {
        return Err(GeometryError::Csv("unexpected header".into()));
    }
    let mut out = Section::zeros(grid.cells.len());
    let mut seen = vec![false; grid.cells.len()];
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 + DIM {
            return Err(GeometryError::Csv(format!("line {}: expected {} fields", ln + 2, 8 + DIM)));
        }
        let bad = |e: String| GeometryError::Csv(format!("line {}: {e}", ln + 2));
        let idx: Vec<usize> = fields[..4]
            .iter()
            .map(|f| f.trim().parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?;
        let mut w = [0.0; DIM];
        for (c, f) in w.iter_mut().zip(&fields[8..]) {
            *c = f.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
        }
        let c = grid
            .cell_at([idx[0], idx[1], idx[2]], idx[3])
            .ok_or_else(|| bad(format!("no interior cell at {idx:?}")))?;
        out.values[c] = Multivector::from_witt(&w);
        seen[c] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(GeometryError::Csv(format!("no row for cell {:?}", grid.cells[missing].index)));
    }
    Ok(out)
}
