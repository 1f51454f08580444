//! Fixed-point solver for the instationary incompressible viscous MHD system
//! in its quaternionic form.
//!
//! Each outer step solves for the pressure, updates the velocity through
//! `u = lift + T Q T [c_b·F - c_p·grad p]` and then iterates the induction
//! equation `B = lift + T Q T [c_m·(Re(B D)u - Re(u D)B)]`. The lift carries the
//! initial and lateral data: with `ext` the time-constant extension of the
//! initial values, `lift = F tr + T D⁺ ext` and the bracket is corrected by
//! `-D⁺D⁺ ext`, so constant states are reproduced exactly.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::algebra::{cross, Multivector};
use crate::eisenstein::LatticeSpec;
use crate::geometry::{build_grid, lq_norm, DomainSpec, FaceKind, GeometryError, Resolution, Section, SpaceTimeGrid};
use crate::operators::{
    advect, apply_dirac, bergman_build, bergman_p_transpose, bergman_q, cauchy, grad, grad_transpose, rot, teodorescu,
    teodorescu_transpose, BergmanFactorization, DiracSign, OperatorContext, OperatorError,
};

/// Consecutive growing outer residuals that count as divergence.
pub const DIVERGENCE_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum MhdError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("pressure solve stalled after {iterations} iterations, relative residual {residual:e}")]
    Pressure { iterations: usize, residual: f64 },
    #[error("induction iteration did not converge, last contraction ratio {ratio}")]
    Inner { ratio: f64 },
    #[error("outer iteration diverged after {} steps", history.len())]
    Diverged { history: Vec<HistoryRow> },
    #[error("boundary data has {got} face values, expected {want}")]
    BoundarySize { got: usize, want: usize },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Prefactor convention for the update lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientMode {
    /// `Re/μ₀` on the whole bracket, `Re²` on the pressure, `Rm²` on the induction term.
    #[default]
    Literal,
    /// `1/μ₀` on the Lorentz force only, unit factors elsewhere and the physical
    /// sign of the induction term; matches `D⁺D⁺ = -Δ/k + ∂t`.
    Corrected,
}

impl FromStr for CoefficientMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "literal" => Ok(Self::Literal),
            "corrected" => Ok(Self::Corrected),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

impl fmt::Display for CoefficientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Corrected => "corrected",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MHDConfig {
    /// lattice rank; 0 means the flat unit cube
    pub p: usize,
    pub l: usize,
    pub n: usize,
    pub nt: usize,
    pub t_end: f64,
    pub re: f64,
    pub rm: f64,
    pub mu0: f64,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub kernel_tol: f64,
    pub mode: CoefficientMode,
    pub pressure_tol: f64,
    pub max_pressure: usize,
    /// relative singular-value cutoff of the Bergman solve
    pub bergman_cutoff: f64,
    /// `false` drops every magnetic term (pure Navier–Stokes)
    pub magnetic: bool,
    /// uniform part of the initial and lateral magnetic data
    pub b_uniform: [f64; 3],
    /// amplitude of the solenoidal initial perturbation
    /// `(sin 2πx₂ cos 2πx₃, sin 2πx₃ + cos 2πx₁, sin 2πx₁ sin 2πx₂)`
    pub b_wave: f64,
}

impl Default for MHDConfig {
    fn default() -> Self {
        Self {
            p: 3,
            l: 0,
            n: 8,
            nt: 8,
            t_end: 1.0,
            re: 1.0,
            rm: 1.0,
            mu0: 1.0,
            outer_tol: 1e-10,
            inner_tol: 1e-10,
            max_outer: 20,
            max_inner: 50,
            kernel_tol: 1e-10,
            mode: CoefficientMode::Literal,
            pressure_tol: 1e-10,
            max_pressure: 500,
            bergman_cutoff: 1e-10,
            magnetic: true,
            b_uniform: [0.0; 3],
            b_wave: 0.0,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, MhdError> {
    v.parse().map_err(|_| MhdError::Config { line, msg: format!("bad value `{v}` for {key}") })
}

impl MHDConfig {
    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self, MhdError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| MhdError::Config { line, msg: format!("expected `key = value`, got `{s}`") })?;
            match k {
                "domain.p" => c.p = parse_value(line, k, v)?,
                "domain.l" => c.l = parse_value(line, k, v)?,
                "grid.n" => c.n = parse_value(line, k, v)?,
                "grid.nt" => c.nt = parse_value(line, k, v)?,
                "time.T" => c.t_end = parse_value(line, k, v)?,
                "mhd.Re" => c.re = parse_value(line, k, v)?,
                "mhd.Rm" => c.rm = parse_value(line, k, v)?,
                "mhd.mu0" => c.mu0 = parse_value(line, k, v)?,
                "mhd.magnetic" => c.magnetic = parse_value(line, k, v)?,
                "solver.outer_tol" => c.outer_tol = parse_value(line, k, v)?,
                "solver.inner_tol" => c.inner_tol = parse_value(line, k, v)?,
                "solver.max_outer" => c.max_outer = parse_value(line, k, v)?,
                "solver.max_inner" => c.max_inner = parse_value(line, k, v)?,
                "solver.pressure_tol" => c.pressure_tol = parse_value(line, k, v)?,
                "solver.max_pressure" => c.max_pressure = parse_value(line, k, v)?,
                "solver.bergman_cutoff" => c.bergman_cutoff = parse_value(line, k, v)?,
                "kernel.tol" => c.kernel_tol = parse_value(line, k, v)?,
                "data.b_wave" => c.b_wave = parse_value(line, k, v)?,
                "data.b_uniform" => {
                    let parts: Vec<f64> =
                        v.split(',').map(|x| parse_value(line, k, x.trim())).collect::<Result<_, _>>()?;
                    c.b_uniform = parts
                        .try_into()
                        .map_err(|_| MhdError::Config { line, msg: "data.b_uniform needs three values".into() })?;
                }
                "mode" => c.mode = v.parse().map_err(|msg| MhdError::Config { line, msg })?,
                _ => return Err(MhdError::Config { line, msg: format!("unknown key `{k}`") }),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), MhdError> {
        let positive = [
            ("time.T", self.t_end),
            ("mhd.Re", self.re),
            ("mhd.Rm", self.rm),
            ("mhd.mu0", self.mu0),
            ("solver.outer_tol", self.outer_tol),
            ("solver.inner_tol", self.inner_tol),
            ("solver.pressure_tol", self.pressure_tol),
            ("kernel.tol", self.kernel_tol),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MhdError::Invalid(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.bergman_cutoff >= 0.0) {
            return Err(MhdError::Invalid("solver.bergman_cutoff must be non-negative".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.max_pressure == 0 {
            return Err(MhdError::Invalid("iteration caps must be at least 1".into()));
        }
        if self.p > 3 || self.l > self.p {
            return Err(MhdError::Invalid(format!("need 0 ≤ l ≤ p ≤ 3, got p={} l={}", self.p, self.l)));
        }
        if self.n < 2 || self.nt < 2 {
            return Err(MhdError::Invalid("grid.n and grid.nt must be at least 2".into()));
        }
        Ok(())
    }

    /// Writes the config back in the parseable format.
    pub fn to_text(&self) -> String {
        format!(
            "domain.p = {}\ndomain.l = {}\ngrid.n = {}\ngrid.nt = {}\ntime.T = {:?}\nmhd.Re = {:?}\nmhd.Rm = {:?}\n\
             mhd.mu0 = {:?}\nmhd.magnetic = {}\nsolver.outer_tol = {:e}\nsolver.inner_tol = {:e}\nsolver.max_outer = {}\n\
             solver.max_inner = {}\nsolver.pressure_tol = {:e}\nsolver.max_pressure = {}\nsolver.bergman_cutoff = {:e}\n\
             kernel.tol = {:e}\nmode = {}\ndata.b_uniform = {:?},{:?},{:?}\ndata.b_wave = {:?}\n",
            self.p,
            self.l,
            self.n,
            self.nt,
            self.t_end,
            self.re,
            self.rm,
            self.mu0,
            self.magnetic,
            self.outer_tol,
            self.inner_tol,
            self.max_outer,
            self.max_inner,
            self.pressure_tol,
            self.max_pressure,
            self.bergman_cutoff,
            self.kernel_tol,
            self.mode,
            self.b_uniform[0],
            self.b_uniform[1],
            self.b_uniform[2],
            self.b_wave
        )
    }

    pub fn domain(&self) -> Result<DomainSpec, MhdError> {
        if self.p == 0 {
            return Ok(DomainSpec::unit_cube(self.t_end));
        }
        let lat = LatticeSpec::new(self.p, self.l).map_err(|e| MhdError::Invalid(e.to_string()))?;
        Ok(DomainSpec::periodic(lat, self.t_end))
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid, MhdError> {
        Ok(build_grid(&self.domain()?, Resolution::cubic(self.n, self.nt))?)
    }

    fn factors(&self) -> Factors {
        match self.mode {
            CoefficientMode::Literal => Factors {
                lorentz: self.re / self.mu0,
                convective: self.re / self.mu0,
                pressure: self.re * self.re,
                induction: self.rm * self.rm,
            },
            CoefficientMode::Corrected => {
                Factors { lorentz: 1.0 / self.mu0, convective: 1.0, pressure: 1.0, induction: -1.0 }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Factors {
    lorentz: f64,
    convective: f64,
    pressure: f64,
    induction: f64,
}

/// Face data: initial values on `t = 0` faces and the lateral trace; values on
/// final faces are ignored. Velocity lateral data is zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub u: Section,
    pub b: Section,
}

impl BoundaryData {
    pub fn zero(grid: &SpaceTimeGrid) -> Self {
        Self { u: Section::zeros(grid.faces.len()), b: Section::zeros(grid.faces.len()) }
    }

    /// Samples `u₀`, `B₀` on the initial faces and `h` on the lateral faces.
    pub fn sample<U, B, H>(grid: &SpaceTimeGrid, u0: U, b0: B, h: H) -> Self
    where
        U: Fn([f64; 3]) -> [f64; 3],
        B: Fn([f64; 3]) -> [f64; 3],
        H: Fn([f64; 3], f64) -> [f64; 3],
    {
        let mut d = Self::zero(grid);
        for (i, f) in grid.faces.iter().enumerate() {
            match f.kind {
                FaceKind::Initial => {
                    d.u.values[i] = Multivector::vector(u0(f.center.x));
                    d.b.values[i] = Multivector::vector(b0(f.center.x));
                }
                FaceKind::Lateral { .. } => d.b.values[i] = Multivector::vector(h(f.center.x, f.center.t)),
                FaceKind::Final => {}
            }
        }
        d
    }

    /// Data described by the config: zero velocity, `B₀ = b_uniform + b_wave·w`
    /// with the solenoidal wave `w`, and `h = b_uniform`.
    pub fn from_config(grid: &SpaceTimeGrid, cfg: &MHDConfig) -> Self {
        let (u, e) = (cfg.b_uniform, cfg.b_wave);
        Self::sample(
            grid,
            |_| [0.0; 3],
            |x| {
                let w = solenoidal_wave(x);
                [u[0] + e * w[0], u[1] + e * w[1], u[2] + e * w[2]]
            },
            |_, _| u,
        )
    }

    /// Largest lateral normal flux mismatch `|Σ h·ν dA|` per time layer; a
    /// nonzero value means `h` is not the trace of a solenoidal field.
    pub fn flux_defect(&self, grid: &SpaceTimeGrid) -> f64 {
        let mut per_layer = vec![0.0; grid.nt];
        for (f, v) in grid.faces.iter().zip(&self.b.values) {
            if let FaceKind::Lateral { .. } = f.kind {
                let h = v.vec_part();
                let flux: f64 = (0..3).map(|a| h[a] * f.normal[a]).sum();
                per_layer[grid.cells[f.cell].index[3]] += flux * f.area;
            }
        }
        per_layer.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Divergence-free periodic test field; each component is independent of
/// its own coordinate.
pub fn solenoidal_wave(x: [f64; 3]) -> [f64; 3] {
    use std::f64::consts::TAU;
    let (s, c) = (|a: f64| (TAU * a).sin(), |a: f64| (TAU * a).cos());
    [s(x[1]) * c(x[2]), s(x[2]) + c(x[0]), s(x[0]) * s(x[1])]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub du: f64,
    pub db: f64,
    pub divu: f64,
    pub divb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MHDState {
    pub u: Section,
    pub b: Section,
    pub p: Section,
    pub history: Vec<HistoryRow>,
    /// contraction ratios of the last induction iteration
    pub inner_ratios: Vec<f64>,
    pub converged: bool,
}

impl MHDState {
    /// Packs `u` into the vector blades, `B` into the bivector blades
    /// `e₂e₃, e₃e₁, e₁e₂` and `p` into the scalar blade.
    pub fn packed(&self) -> Section {
        let bv = [
            Multivector::e(2) * Multivector::e(3),
            Multivector::e(3) * Multivector::e(1),
            Multivector::e(1) * Multivector::e(2),
        ];
        Section {
            values: (0..self.u.len())
                .map(|c| {
                    let mut m = Multivector::vector(self.u.values[c].vec_part());
                    for (a, v) in self.b.values[c].vec_part().iter().enumerate() {
                        m.axpy(*v, &bv[a]);
                    }
                    m + Multivector::scalar(self.p.values[c].scalar_part())
                })
                .collect(),
        }
    }
}

/// Operators for one diffusivity: context plus Bergman factorization.
pub struct FieldOperators {
    pub ctx: OperatorContext,
    pub fac: BergmanFactorization,
}

impl FieldOperators {
    pub fn build(grid: &SpaceTimeGrid, k: f64, cfg: &MHDConfig) -> Result<Self, MhdError> {
        let ctx = if grid.spec.lattice.is_some() {
            OperatorContext::periodized(grid.clone(), k, cfg.kernel_tol)?
        } else {
            OperatorContext::flat(grid.clone(), k)?
        };
        let fac = bergman_build(&ctx, cfg.bergman_cutoff)?;
        Ok(Self { ctx, fac })
    }

    /// `T Q T s`.
    pub fn tqt(&self, s: &Section) -> Result<Section, MhdError> {
        let t = teodorescu(s, &self.ctx, None)?;
        let q = bergman_q(&t, &self.fac, &self.ctx)?;
        Ok(teodorescu(&q, &self.ctx, None)?)
    }

    fn qt(&self, s: &Section) -> Result<Section, MhdError> {
        let t = teodorescu(s, &self.ctx, None)?;
        Ok(bergman_q(&t, &self.fac, &self.ctx)?)
    }

    fn qt_transpose(&self, s: &Section) -> Result<Section, MhdError> {
        let p = bergman_p_transpose(s, &self.fac, &self.ctx)?;
        Ok(teodorescu_transpose(&s.sub(&p), &self.ctx)?)
    }
}

/// Vector part with signed zeros normalized, so that runs that differ only in
/// exact zeros stay bitwise identical.
fn vector_part(s: &Section) -> Section {
    s.map(|m| Multivector::vector(m.vec_part().map(|c| c + 0.0)))
}

/// `(u · grad) w` by central differences.
pub fn convective(u: &Section, w: &Section, grid: &SpaceTimeGrid) -> Section {
    vector_part(&advect(u, w, grid))
}

/// `rot B × B`, pointwise.
pub fn lorentz(b: &Section, grid: &SpaceTimeGrid) -> Section {
    let r = rot(b, grid);
    Section {
        values: r
            .values
            .iter()
            .zip(&b.values)
            .map(|(r, b)| Multivector::vector(cross(&r.vec_part(), &b.vec_part())))
            .collect(),
    }
}

/// `Re(a D) b - Re(b D) a = (b · grad) a - (a · grad) b`; antisymmetric in its arguments.
pub fn magnetic_bracket(a: &Section, b: &Section, grid: &SpaceTimeGrid) -> Section {
    convective(b, a, grid).sub(&convective(a, b, grid))
}

/// `c_l·rot B × B - c_c·(u · grad) u`.
fn velocity_bracket(u: &Section, b: &Section, grid: &SpaceTimeGrid, f: &Factors, magnetic: bool) -> Section {
    let mut out = convective(u, u, grid).scale(-f.convective);
    if magnetic {
        out.axpy(f.lorentz, &lorentz(b, grid));
    }
    vector_part(&out)
}

/// Time-constant extension of the initial face values.
fn initial_extension(grid: &SpaceTimeGrid, faces: &Section) -> Section {
    let mut column = vec![Multivector::zero(); grid.n[0] * grid.n[1] * grid.n[2]];
    let spatial = |c: usize| {
        let i = grid.cells[c].index;
        (i[2] * grid.n[1] + i[1]) * grid.n[0] + i[0]
    };
    for (f, v) in grid.faces.iter().zip(&faces.values) {
        if f.kind == FaceKind::Initial {
            column[spatial(f.cell)] = *v;
        }
    }
    Section { values: (0..grid.cells.len()).map(|c| column[spatial(c)]).collect() }
}

/// Lift of the data and the bracket correction `-D⁺D⁺ ext`.
struct Lift {
    ext: Section,
    lift: Section,
    correction: Section,
}

fn lift(faces: &Section, ops: &FieldOperators) -> Result<Lift, MhdError> {
    let grid = &ops.ctx.grid;
    let mut data = faces.clone();
    for (f, v) in grid.faces.iter().zip(data.values.iter_mut()) {
        if f.kind == FaceKind::Final {
            *v = Multivector::zero();
        }
    }
    let ext = initial_extension(grid, &data);
    let dext = apply_dirac(&ext, &ops.ctx, DiracSign::Plus)?;
    let l = cauchy(&data, &ops.ctx, None)?.add(&teodorescu(&dext, &ops.ctx, None)?);
    let correction = apply_dirac(&dext, &ops.ctx, DiracSign::Plus)?.scale(-1.0);
    Ok(Lift { ext, lift: vector_part(&l), correction })
}

fn scalar_coeffs(s: &Section) -> Vec<f64> {
    s.values.iter().map(|m| m.scalar_part()).collect()
}

fn scalar_section(v: &[f64]) -> Section {
    Section { values: v.iter().map(|x| Multivector::scalar(*x)).collect() }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The pressure operator `p ↦ scalar(Q T grad p)` and its adjoint.
fn pressure_apply(p: &[f64], ops: &FieldOperators) -> Result<Vec<f64>, MhdError> {
    let g = grad(&scalar_section(p), &ops.ctx.grid);
    Ok(scalar_coeffs(&ops.qt(&g)?))
}

fn pressure_apply_transpose(r: &[f64], ops: &FieldOperators) -> Result<Vec<f64>, MhdError> {
    // adjoint of reading the Witt scalar coordinate writes both of its blades
    let lifted = Section {
        values: r
            .iter()
            .map(|x| {
                let mut b = [0.0; crate::algebra::DIM];
                b[0] = *x;
                b[24] = *x;
                Multivector::from_blades(b)
            })
            .collect(),
    };
    let g = grad_transpose(&ops.qt_transpose(&lifted)?, &ops.ctx.grid);
    Ok(g.values.iter().map(|m| m.blades()[0]).collect())
}

/// Solves `scalar(Q T grad p) = rhs` by conjugate gradients on the normal
/// equations; returns the minimum-norm solution shifted to mean zero.
pub fn pressure_solve(rhs: &[f64], ops: &FieldOperators, tol: f64, max_iter: usize) -> Result<Vec<f64>, MhdError> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = pressure_apply_transpose(&r, ops)?;
    let z0 = dot(&z, &z).sqrt();
    if z0 == 0.0 {
        return Ok(x);
    }
    let mut d = z.clone();
    let mut zz = z0 * z0;
    let mut it = 0;
    while zz.sqrt() > tol * z0 {
        if it == max_iter {
            return Err(MhdError::Pressure { iterations: it, residual: zz.sqrt() / z0 });
        }
        let w = pressure_apply(&d, ops)?;
        let alpha = zz / dot(&w, &w);
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * w[i];
        }
        z = pressure_apply_transpose(&r, ops)?;
        let zz_new = dot(&z, &z);
        let beta = zz_new / zz;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
        zz = zz_new;
        it += 1;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    Ok(x)
}

/// Pressure for the bracket `f` (already scaled): `c_p·scalar(QT grad p) = scalar(QT f)`.
pub fn pressure_step(f: &Section, ops: &FieldOperators, cfg: &MHDConfig) -> Result<Section, MhdError> {
    let fac = cfg.factors();
    let rhs: Vec<f64> = scalar_coeffs(&ops.qt(f)?).iter().map(|v| v / fac.pressure).collect();
    let p = pressure_solve(&rhs, ops, cfg.pressure_tol, cfg.max_pressure)?;
    Ok(scalar_section(&p))
}

/// `u = lift + T Q T [f - c_p grad p]`.
pub fn velocity_step(
    f: &Section,
    p: &Section,
    lift_u: &Section,
    ops: &FieldOperators,
    cfg: &MHDConfig,
) -> Result<Section, MhdError> {
    let rhs = f.sub(&grad(p, &ops.ctx.grid).scale(cfg.factors().pressure));
    Ok(vector_part(&lift_u.add(&ops.tqt(&rhs)?)))
}

/// Induction fixed point seeded with `b_prev`. Returns the iterate and the
/// contraction ratios.
pub fn magnetic_step(
    b_prev: &Section,
    u: &Section,
    lift_b: &Section,
    correction: &Section,
    ops: &FieldOperators,
    cfg: &MHDConfig,
) -> Result<(Section, Vec<f64>), MhdError> {
    let grid = &ops.ctx.grid;
    let c = cfg.factors().induction;
    let mut b = b_prev.clone();
    let mut last_step = f64::NAN;
    let mut ratios = Vec::new();
    for _ in 0..cfg.max_inner {
        let br = magnetic_bracket(&b, u, grid).scale(c);
        let next = vector_part(&lift_b.add(&ops.tqt(&br.add(correction))?));
        let step = lq_norm(grid, &next.sub(&b), 2.0);
        if last_step > 0.0 {
            ratios.push(step / last_step);
        }
        last_step = step;
        let size = lq_norm(grid, &next, 2.0);
        b = next;
        if step <= cfg.inner_tol * size || step == 0.0 {
            return Ok((b, ratios));
        }
    }
    Err(MhdError::Inner { ratio: ratios.last().copied().unwrap_or(f64::NAN) })
}

fn divergence_norm(s: &Section, grid: &SpaceTimeGrid) -> f64 {
    lq_norm(grid, &crate::operators::div(s, grid), 2.0)
}

/// Builds the operators for `cfg` and runs [`solve_with`].
pub fn solve(cfg: &MHDConfig, data: &BoundaryData) -> Result<MHDState, MhdError> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let fluid = FieldOperators::build(&grid, cfg.re, cfg)?;
    let magnetic = if cfg.rm == cfg.re { None } else { Some(FieldOperators::build(&grid, cfg.rm, cfg)?) };
    solve_with(cfg, data, &fluid, magnetic.as_ref().unwrap_or(&fluid))
}

/// Outer fixed-point loop on prebuilt operators (`k = Re` and `k = Rm`).
pub fn solve_with(
    cfg: &MHDConfig,
    data: &BoundaryData,
    fluid: &FieldOperators,
    mag: &FieldOperators,
) -> Result<MHDState, MhdError> {
    let grid = &fluid.ctx.grid;
    for s in [&data.u, &data.b] {
        if s.len() != grid.faces.len() {
            return Err(MhdError::BoundarySize { got: s.len(), want: grid.faces.len() });
        }
    }
    let f = cfg.factors();
    let mut u_data = data.u.clone();
    for (face, v) in grid.faces.iter().zip(u_data.values.iter_mut()) {
        if let FaceKind::Lateral { .. } = face.kind {
            *v = Multivector::zero();
        }
    }
    let lu = lift(&u_data, fluid)?;
    let lb = if cfg.magnetic { Some(lift(&data.b, mag)?) } else { None };
    let mut u = vector_part(&lu.ext);
    let mut b = lb.as_ref().map_or_else(|| Section::zeros(grid.cells.len()), |l| vector_part(&l.ext));
    let mut p = Section::zeros(grid.cells.len());
    let mut history = Vec::new();
    let mut inner_ratios = Vec::new();
    let mut growth = 0;
    for it in 1..=cfg.max_outer {
        let bracket = velocity_bracket(&u, &b, grid, &f, cfg.magnetic).add(&lu.correction);
        p = pressure_step(&bracket, fluid, cfg)?;
        let u_new = velocity_step(&bracket, &p, &lu.lift, fluid, cfg)?;
        let b_new = match &lb {
            Some(l) => {
                let (bn, ratios) = magnetic_step(&b, &u_new, &l.lift, &l.correction, mag, cfg)?;
                inner_ratios = ratios;
                bn
            }
            None => b.clone(),
        };
        let row = HistoryRow {
            iteration: it,
            du: lq_norm(grid, &u_new.sub(&u), 2.0),
            db: lq_norm(grid, &b_new.sub(&b), 2.0),
            divu: divergence_norm(&u_new, grid),
            divb: divergence_norm(&b_new, grid),
        };
        u = u_new;
        b = b_new;
        if let Some(prev) = history.last() {
            let prev: &HistoryRow = prev;
            growth = if row.du + row.db > prev.du + prev.db { growth + 1 } else { 0 };
        }
        history.push(row);
        if row.du + row.db <= cfg.outer_tol {
            return Ok(MHDState { u, b, p, history, inner_ratios, converged: true });
        }
        if growth >= DIVERGENCE_WINDOW {
            return Err(MhdError::Diverged { history });
        }
    }
    Ok(MHDState { u, b, p, history, inner_ratios, converged: false })
}

/// Writes `state.csv` (packed section) and `history.csv` into `dir`.
pub fn write_outputs(dir: &Path, grid: &SpaceTimeGrid, state: &MHDState) -> Result<Vec<std::path::PathBuf>, MhdError> {
    std::fs::create_dir_all(dir)?;
    let sp = dir.join("state.csv");
    crate::geometry::write_section_csv(grid, &state.packed(), std::io::BufWriter::new(std::fs::File::create(&sp)?))?;
    let hp = dir.join("history.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&hp)?);
    writeln!(w, "iteration,du,dB,divu,divB")?;
    for r in &state.history {
        writeln!(w, "{},{:?},{:?},{:?},{:?}", r.iteration, r.du, r.db, r.divu, r.divb)?;
    }
    w.flush()?;
    Ok(vec![sp, hp])
}
