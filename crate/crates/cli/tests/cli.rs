use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_depthforge"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn report_value(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no `{key}` row in\n{report}"))
        .to_string()
}

/// Five points around the origin plus a far one.
fn location_files(dir: &Path) -> (PathBuf, PathBuf) {
    let data = write(dir, "z.csv", "x,y\n1,0\n0,1\n-1,0\n0,-1\n0.2,0.1\n5,5\n");
    let center = write(dir, "mu.csv", "# 2 1\n0\n0\n");
    (data, center)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn location_depth_report() {
    let dir = TempDir::new().unwrap();
    let (data, center) = location_files(dir.path());
    let out = dir.path().join("report.csv");
    let o = run(&["depth", "--family", "location", "--data", s(&data), "--param", s(&center), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("wall time"));
    let report = fs::read_to_string(&out).unwrap();
    assert!(!report.contains("wall time"));
    assert_eq!(report_value(&report, "certificate"), "exact_oracle");
    assert_eq!(report_value(&report, "n"), "6");
    let depth: f64 = report_value(&report, "depth").parse().unwrap();
    assert_eq!(depth, 2.0);
}

#[test]
fn report_replays_as_config() {
    let dir = TempDir::new().unwrap();
    let (data, center) = location_files(dir.path());
    let first = dir.path().join("first.csv");
    let o = run(&["depth", "--family", "location", "--data", s(&data), "--param", s(&center), "--out", s(&first)]);
    assert!(o.status.success());
    let second = dir.path().join("second.csv");
    let o = run(&["depth", "--config", s(&first), "--out", s(&second)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(&first).unwrap();
    let b = fs::read_to_string(&second).unwrap();
    assert_eq!(a.replace(s(&first), ""), b.replace(s(&second), ""));
}

#[test]
fn rank_orders_by_depth() {
    let dir = TempDir::new().unwrap();
    let (data, center) = location_files(dir.path());
    let far = write(dir.path(), "far.csv", "# 2 1\n4\n4\n");
    let o = run(&["rank", "--family", "location", "--data", s(&data), "--param", s(&far), "--param", s(&center)]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let first = stdout.lines().find(|l| l.starts_with("1,")).unwrap();
    assert!(first.starts_with("1,1,"), "{first}");
}

#[test]
fn rrr_fit_passes_its_fixed_point_check() {
    let dir = TempDir::new().unwrap();
    let mut x = String::new();
    let mut y = String::new();
    for i in 0..20 {
        let t = i as f64;
        let (a, b, c) = ((t * 0.7).sin(), (t * 1.3).cos(), (t * 0.31).sin() * 2.0);
        x.push_str(&format!("{a},{b},{c}\n"));
        y.push_str(&format!("{},{}\n", a + b + 0.1 * (t * 2.1).sin(), 2.0 * a + 2.0 * b - 0.05 * c));
    }
    let xp = write(dir.path(), "x.csv", &x);
    let yp = write(dir.path(), "y.csv", &y);
    let bp = dir.path().join("b.csv");
    let o = run(&["fit", "--family", "rrr", "--data", s(&xp), "--response", s(&yp), "--rank", "1", "--param-out", s(&bp)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["check", "--family", "rrr", "--data", s(&xp), "--response", s(&yp), "--rank", "1", "--param", s(&bp)]);
    assert!(o.status.success());
    assert_eq!(report_value(&String::from_utf8(o.stdout).unwrap(), "pass"), "true");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (data, center) = location_files(dir.path());
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(run(&["depth", "--family", "nonsense", "--data", s(&data), "--param", s(&center)])), 2);
    assert_eq!(code(run(&["rank", "--family", "location", "--data", s(&data), "--param", s(&center)])), 2);
    assert_eq!(code(run(&["depth", "--family", "location", "--param", s(&center)])), 2);
    let bad = write(dir.path(), "bad.csv", "1,2\n3,oops\n");
    let o = run(&["depth", "--family", "location", "--data", s(&bad), "--param", s(&center)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2, column 2"));
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(run(&["depth", "--family", "location", "--data", s(&missing), "--param", s(&center)])), 3);
    let cfg = write(dir.path(), "cfg.txt", "colour=blue\n");
    assert_eq!(code(run(&["depth", "--config", s(&cfg)])), 2);
}
