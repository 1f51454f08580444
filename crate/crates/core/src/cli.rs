//! Command-line front end: identity checks, kernel and Eisenstein evaluation,
//! MHD solves. Every command writes a `manifest.json` next to its outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::{Multivector, Quaternion, Rotor};
use crate::eisenstein::{choose_truncation, eisenstein, LatticeSpec};
use crate::geometry::{build_grid, DomainSpec, Resolution, Section, SpaceTimeGrid};
use crate::kernels::{
    fundamental_e, fundamental_g, fundamental_grade_one, grade_one_multivector, rotated_kernel, KernelSpec,
    SpaceTimePoint,
};
use crate::mhd::{solve, write_outputs, BoundaryData, MHDConfig};
use crate::operators::{
    bergman_build, bergman_p, borel_pompeiu_residual, cauchy, right_inverse_residual, OperatorContext,
};

/// Minimum error reduction per grid doubling.
pub const REFINEMENT_RATIO: f64 = 1.5;
/// Idempotence budget for the Bergman projection.
pub const IDEMPOTENCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hcmhd", version, about = "Parabolic Dirac operator calculus and MHD fixed-point solver")]
pub struct Cli {
    /// directory for reports, state files and the manifest
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the identity suite on the given grid sizes and write report.csv
    Check {
        /// comma-separated cells per axis, default 4,8
        #[arg(long, value_delimiter = ',')]
        grids: Vec<usize>,
    },
    /// Evaluate the fundamental solution
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Evaluate or plan the periodized lattice series
    #[command(subcommand)]
    Eisenstein(EisensteinCommand),
    /// Run the MHD fixed-point solver
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// Print the 32 Witt coefficients of E(x, t; k)
    Eval {
        #[arg(long)]
        k: f64,
        /// x1,x2,x3,t
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Vec<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EisensteinCommand {
    /// Print the coefficients of the truncated lattice series
    Eval {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        l: usize,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Vec<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Print the truncation order and its certified bound
    Plan {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        l: usize,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long)]
        tol: f64,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
    },
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
    pub passed: bool,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn check_k(k: f64) -> Result<(), CliError> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--k must be positive, got {k}")))
    }
}

fn check_point(point: &[f64]) -> Result<SpaceTimePoint, CliError> {
    match point {
        [a, b, c, t] => Ok(SpaceTimePoint::new([*a, *b, *c], *t)),
        _ => Err(CliError::Usage(format!("--point needs x1,x2,x3,t, got {} values", point.len()))),
    }
}

fn check_lattice(p: usize, l: usize) -> Result<LatticeSpec, CliError> {
    if !(1..=3).contains(&p) || l > p {
        return Err(CliError::Usage(format!("need 0 ≤ l ≤ p ≤ 3 and p ≥ 1, got p={p} l={l}")));
    }
    LatticeSpec::new(p, l).map_err(|e| CliError::Usage(e.to_string()))
}

fn check_tol(tol: f64) -> Result<(), CliError> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--tol must be positive, got {tol}")))
    }
}

fn coefficient_line(m: &Multivector) -> String {
    m.witt_coeffs().iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(",")
}

/// Runs one command; returns whether its checks passed. Human-readable
/// results go to `stdout`.
pub fn run<W: Write>(cli: &Cli, stdout: &mut W) -> Result<bool, CliError> {
    let started = now();
    let (name, config, outputs, passed) = match &cli.command {
        Command::Kernel(KernelCommand::Eval { k, point }) => {
            check_k(*k)?;
            let p = check_point(point)?;
            let spec = KernelSpec::new(*k).map_err(|e| CliError::Usage(e.to_string()))?;
            let e = fundamental_e(p, &spec).map_err(numerical)?;
            writeln!(stdout, "{}", coefficient_line(&e))?;
            ("kernel eval".to_string(), None, Vec::new(), true)
        }
        Command::Eisenstein(EisensteinCommand::Eval { p, l, k, point, tol }) => {
            check_k(*k)?;
            check_tol(*tol)?;
            let lat = check_lattice(*p, *l)?;
            let pt = check_point(point)?;
            let spec = KernelSpec::new(*k).map_err(|e| CliError::Usage(e.to_string()))?;
            let r = pt.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let plan = choose_truncation(*tol, r, pt.t.max(f64::MIN_POSITIVE), &spec, &lat).map_err(numerical)?;
            let e = eisenstein(pt, &spec, &lat, plan.m).map_err(numerical)?;
            writeln!(stdout, "{}", coefficient_line(&e))?;
            ("eisenstein eval".to_string(), None, Vec::new(), true)
        }
        Command::Eisenstein(EisensteinCommand::Plan { p, l, k, tol, r, t_max }) => {
            check_k(*k)?;
            check_tol(*tol)?;
            let lat = check_lattice(*p, *l)?;
            if !(*r >= 0.0) || !(*t_max > 0.0) {
                return Err(CliError::Usage("--r must be ≥ 0 and --t-max > 0".into()));
            }
            let spec = KernelSpec::new(*k).map_err(|e| CliError::Usage(e.to_string()))?;
            let plan = choose_truncation(*tol, *r, *t_max, &spec, &lat).map_err(numerical)?;
            writeln!(stdout, "M,bound")?;
            writeln!(stdout, "{},{:?}", plan.m, plan.bound)?;
            ("eisenstein plan".to_string(), None, Vec::new(), plan.bound <= *tol)
        }
        Command::Solve { config } => {
            let text = fs::read_to_string(config)?;
            let cfg = MHDConfig::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?;
            let grid = cfg.grid().map_err(|e| CliError::Usage(e.to_string()))?;
            let state = solve(&cfg, &BoundaryData::from_config(&grid, &cfg)).map_err(numerical)?;
            let files = write_outputs(&cli.out, &grid, &state).map_err(numerical)?;
            writeln!(stdout, "iterations {} converged {}", state.history.len(), state.converged)?;
            ("solve".to_string(), Some(cfg.to_text()), files, state.converged)
        }
        Command::Check { grids } => {
            let grids = if grids.is_empty() { vec![4, 8] } else { grids.clone() };
            if grids.iter().any(|&n| n < 2) {
                return Err(CliError::Usage("grid sizes must be at least 2".into()));
            }
            let rows = check_suite(&grids)?;
            fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("report.csv");
            write_report(&path, &rows)?;
            let passed = rows.iter().all(|r| r.pass);
            for r in &rows {
                writeln!(stdout, "{} n={} {:e} {}", r.test, r.grid, r.value, if r.pass { "pass" } else { "FAIL" })?;
            }
            ("check".to_string(), Some(format!("grids = {grids:?}")), vec![path], passed)
        }
    };
    let manifest = RunManifest {
        command: name,
        config,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: now(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        passed,
    };
    fs::create_dir_all(&cli.out)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(numerical)?;
    fs::write(cli.out.join("manifest.json"), json + "\n")?;
    Ok(passed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub test: &'static str,
    /// cells per axis; 0 for grid-free checks
    pub grid: usize,
    pub value: f64,
    /// error reduction against the previous grid
    pub ratio: Option<f64>,
    pub pass: bool,
}

fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "test,grid,value,ratio,pass")?;
    for r in rows {
        let ratio = r.ratio.map_or(String::new(), |v| format!("{v:?}"));
        writeln!(w, "{},{},{:?},{},{}", r.test, r.grid, r.value, ratio, r.pass)?;
    }
    w.flush()?;
    Ok(())
}

fn cube(n: usize) -> Result<OperatorContext, CliError> {
    let g = build_grid(&DomainSpec::unit_cube(1.0), Resolution::cubic(n, n)).map_err(numerical)?;
    OperatorContext::flat(g, 1.0).map_err(numerical)
}

fn torus(n: usize) -> Result<OperatorContext, CliError> {
    let lat = LatticeSpec::new(3, 0).map_err(numerical)?;
    let g = build_grid(&DomainSpec::periodic(lat, 1.0), Resolution::cubic(n, n)).map_err(numerical)?;
    OperatorContext::periodized(g, 1.0, 1e-10).map_err(numerical)
}

fn bump(grid: &SpaceTimeGrid, periodic: bool) -> Section {
    use std::f64::consts::{PI, TAU};
    Section::on_cells(grid, |c| {
        let x = c.center.x;
        let s = if periodic {
            (TAU * x[0]).sin() * (TAU * x[1]).cos()
        } else {
            x.iter().map(|v| (PI * v).sin().powi(2)).product()
        };
        let b = s * (PI * c.center.t).sin().powi(2);
        Multivector::scalar(b) + Multivector::e(2) * (0.5 * b)
    })
}

fn borel_pompeiu_value(ctx: &OperatorContext, periodic: bool) -> Result<f64, CliError> {
    use std::f64::consts::TAU;
    let field = |x: [f64; 3], t: f64| {
        let v = if periodic { (TAU * x[0]).sin() + t } else { x[0] };
        Multivector::e(1) * v
    };
    let u = Section::on_cells(&ctx.grid, |c| field(c.center.x, c.center.t));
    let tr = Section::on_faces(&ctx.grid, |f| field(f.center.x, f.center.t));
    Ok(borel_pompeiu_residual(&u, &tr, ctx).map_err(numerical)?.relative)
}

fn cauchy_value(ctx: &OperatorContext) -> Result<f64, CliError> {
    let spec = KernelSpec::new(ctx.k()).map_err(numerical)?;
    let probe = |p: SpaceTimePoint| {
        let q = SpaceTimePoint::new([p.x[0] - 0.5, p.x[1] - 0.5, p.x[2] - 0.5], p.t + 0.3);
        fundamental_grade_one(q, &spec).map(|c| grade_one_multivector(&c))
    };
    let mut up = Section::zeros(ctx.grid.cells.len());
    for (v, c) in up.values.iter_mut().zip(&ctx.grid.cells) {
        *v = probe(c.center).map_err(numerical)?;
    }
    let mut tr = Section::zeros(ctx.grid.faces.len());
    for (v, f) in tr.values.iter_mut().zip(&ctx.grid.faces) {
        *v = probe(f.center).map_err(numerical)?;
    }
    let m = ctx.grid.interior_margin();
    let fu = cauchy(&tr, ctx, Some(&m)).map_err(numerical)?;
    Ok(fu.sub(&up).norm_on(&m) / up.norm_on(&m))
}

fn idempotence_value(ctx: &OperatorContext) -> Result<f64, CliError> {
    let fac = bergman_build(ctx, 1e-10).map_err(numerical)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let s = Section {
            values: (0..ctx.grid.cells.len())
                .map(|_| Multivector::from_blades(std::array::from_fn(|_| rng.gen_range(-1.0..1.0))))
                .collect(),
        };
        let p = bergman_p(&s, &fac, ctx).map_err(numerical)?;
        let pp = bergman_p(&p, &fac, ctx).map_err(numerical)?;
        worst = worst.max(pp.sub(&p).norm() / s.norm());
    }
    Ok(worst)
}

fn algebra_value() -> f64 {
    let gens = [Multivector::e(1), Multivector::e(2), Multivector::e(3)];
    let mut worst: f64 = 0.0;
    for (i, a) in gens.iter().enumerate() {
        for (j, b) in gens.iter().enumerate() {
            let want = if i == j { -2.0 } else { 0.0 };
            worst = worst.max((a.gp(b) + b.gp(a) - Multivector::scalar(want)).norm());
        }
        let (f, fd) = (Multivector::f(), Multivector::f_dagger());
        worst = worst.max((a.gp(&f) + f.gp(a)).norm()).max((a.gp(&fd) + fd.gp(a)).norm());
    }
    let (f, fd) = (Multivector::f(), Multivector::f_dagger());
    worst.max(f.gp(&f).norm()).max(fd.gp(&fd).norm()).max((f.gp(&fd) + fd.gp(&f) - Multivector::one()).norm())
}

fn kernel_values() -> Result<(f64, f64), CliError> {
    let spec = KernelSpec::new(1.0).map_err(numerical)?;
    let spec2 = KernelSpec::new(2.5).map_err(numerical)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut reduction, mut rotation): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let x = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let p = SpaceTimePoint::new(x, rng.gen_range(0.05..2.0));
        let e = fundamental_e(p, &spec).map_err(numerical)?;
        let g = fundamental_g(p).map_err(numerical)?;
        reduction = reduction.max((e - g).norm());
        let q = Quaternion::new(rng.gen_range(-1.0..1.0), std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let a = Rotor::normalized(q).map_err(numerical)?;
        let r = rotated_kernel(&a, p, &spec2).map_err(numerical)?;
        let e2 = fundamental_e(p, &spec2).map_err(numerical)?;
        rotation = rotation.max((r - e2).norm());
    }
    Ok((reduction, rotation))
}

/// Identity suite: one row per (test, grid). Grid-dependent rows pass when
/// the error shrinks by [`REFINEMENT_RATIO`] against the previous grid.
pub fn check_suite(grids: &[usize]) -> Result<Vec<ReportRow>, CliError> {
    let mut rows = Vec::new();
    let alg = algebra_value();
    rows.push(ReportRow { test: "algebra_relations", grid: 0, value: alg, ratio: None, pass: alg <= 1e-14 });
    let (red, rot) = kernel_values()?;
    rows.push(ReportRow { test: "kernel_reduction", grid: 0, value: red, ratio: None, pass: red <= 1e-14 });
    rows.push(ReportRow { test: "rotation_invariance", grid: 0, value: rot, ratio: None, pass: rot <= 1e-12 });
    type Probe = fn(usize) -> Result<f64, CliError>;
    let refined: [(&'static str, Probe); 5] = [
        ("borel_pompeiu_cube", |n| borel_pompeiu_value(&cube(n)?, false)),
        ("right_inverse_cube", |n| {
            let ctx = cube(n)?;
            Ok(right_inverse_residual(&bump(&ctx.grid, false), &ctx).map_err(numerical)?.relative)
        }),
        ("cauchy_cube", |n| cauchy_value(&cube(n)?)),
        ("borel_pompeiu_torus", |n| borel_pompeiu_value(&torus(n)?, true)),
        ("right_inverse_torus", |n| {
            let ctx = torus(n)?;
            Ok(right_inverse_residual(&bump(&ctx.grid, true), &ctx).map_err(numerical)?.relative)
        }),
    ];
    for (name, probe) in refined {
        let mut prev: Option<f64> = None;
        for &n in grids {
            let v = probe(n)?;
            let ratio = prev.map(|p| p / v);
            let pass = v.is_finite() && ratio.is_none_or(|r| r >= REFINEMENT_RATIO);
            rows.push(ReportRow { test: name, grid: n, value: v, ratio, pass });
            prev = Some(v);
        }
    }
    for &n in grids {
        let v = idempotence_value(&torus(n)?)?;
        rows.push(ReportRow {
            test: "bergman_idempotence_torus",
            grid: n,
            value: v,
            ratio: None,
            pass: v <= IDEMPOTENCE_TOL,
        });
    }
    Ok(rows)
}
