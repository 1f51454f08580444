use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hcmhd"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hcmhd-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn kernel_eval_prints_coefficients() {
    let out = bin().args(["kernel", "eval", "--k", "1", "--point", "0.1,0.2,0.3,0.5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim().split(',').count(), 32, "{text}");
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let out = bin().args(["kernel", "eval", "--k", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn singular_point_is_an_error() {
    let out = bin().args(["kernel", "eval", "--k", "1", "--point", "0,0,0,0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plan_reports_a_truncation_order() {
    let out = bin()
        .args(["eisenstein", "plan", "--p", "3", "--l", "1", "--k", "1", "--tol", "1e-8", "--r", "1", "--t-max", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains('M'));
}

#[test]
fn zero_data_solve_writes_outputs() {
    let dir = scratch("solve");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "grid.n = 2\ngrid.nt = 2\nsolver.max_outer = 3\n").unwrap();
    let out =
        bin().args(["--out", dir.to_str().unwrap(), "solve", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["state.csv", "history.csv", "manifest.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let history = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2, "{history}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.is_object());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn malformed_config_is_rejected() {
    let dir = scratch("badcfg");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "grid.n = many\n").unwrap();
    let out =
        bin().args(["--out", dir.to_str().unwrap(), "solve", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn documented_config_parses() {
    let text = r"domain.p = 3          # 0 selects the unit cube, 3 the torus T_3
domain.l = 0          # number of antiperiodic axes
grid.n = 8
grid.nt = 8
time.T = 1.0
mhd.Re = 1.0
mhd.Rm = 1.0
mhd.mu0 = 1.0
mhd.magnetic = true
mode = literal  # or corrected
solver.outer_tol = 1e-10
solver.max_outer = 20
data.b_uniform = 0,0,0
data.b_wave = 0.1
";
    let cfg = hypercomplex_mhd::mhd::MHDConfig::parse(text).unwrap();
    assert_eq!(cfg.b_wave, 0.1);
    cfg.validate().unwrap();
}
