use std::path::Path;
use std::process::{Command, Output};

fn beamball(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamball"))
        .args(args)
        .env("BEAMBALL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const STRAIGHT: &str = "\
# reference straight beam
[plant]
variant = straight
m1 = 1.0
m2 = 0.2
r = 0.05
l = 0.2
a = 0.15
rho1 = 0.2179
rho2 = 0.1414
cu = 0.007
cv = 0.0001
u0 = 19
";

#[test]
fn analyze_reports_unstable_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", STRAIGHT);
    let o = beamball(&["analyze", "--config", &cfg]);
    assert!(o.status.success());
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("lambda1 = ")).unwrap();
    let l1: f64 = line["lambda1 = ".len()..].trim().parse().unwrap();
    assert!((l1 - 5.7202).abs() < 1e-3, "{l1}");
    assert!(text.contains("class = one unstable mode"));
}

#[test]
fn open_loop_simulation_from_rest_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", &format!("{STRAIGHT}[sim]\nt_max = 0.5\nrecord_every = 10\nhold = 10\n"));
    let out = dir.path().join("trace.csv");
    let o = beamball(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&out).unwrap();
    assert!(!bytes.contains(&b'\r'));
    let text = String::from_utf8(bytes).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,theta,phi,dtheta,dphi,s,u,F,K,P,E"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.len() > 40);
    for r in &rows {
        assert_eq!(r.len(), 11);
        assert!(r[1..=6].iter().all(|v| *v == "0"), "{r:?}");
    }
    assert!(stdout(&o).contains("outcome = timed-out"));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.cfg",
        &format!("{STRAIGHT}f = 0.4\n[controller]\ngamma = -122\n[sim]\nt_max = 3\nphi0_deg = 77.65\n"),
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = beamball(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let first = text.lines().nth(1).unwrap();
    // u(0) sits on the lower clamp.
    assert_eq!(first.split(',').nth(6), Some("-19"));
    // Twelve significant digits.
    let phi = first.split(',').nth(2).unwrap();
    assert_eq!(phi, "1.35524816417");
}

#[test]
fn domain_and_basin_write_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    let o = beamball(&["domain", "--variant", "circular", "--out", q.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&q).unwrap();
    assert!(text.starts_with("y1,y2\n"));
    assert!(text.lines().count() > 100);

    let b = dir.path().join("b.csv");
    let o = beamball(&["basin", "--variant", "circular", "--gamma", "40", "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&b).unwrap();
    assert!(text.starts_with("y1,y2\n"));
    assert!(stdout(&o).starts_with("B: "));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Configuration problems.
    let bad = write(dir.path(), "bad.cfg", &STRAIGHT.replace("m1 = 1.0", "m1 = -1"));
    let o = beamball(&["analyze", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    let empty = write(dir.path(), "empty.cfg", "[plant]\n");
    assert_eq!(beamball(&["analyze", "--config", &empty]).status.code(), Some(2));
    assert_eq!(beamball(&["analyze", "--config", "/nonexistent/x.cfg"]).status.code(), Some(2));
    assert_eq!(beamball(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(beamball(&["search", "--variant", "circular"]).status.code(), Some(2));
    // Numeric failure: the straight beam has a single unstable mode.
    assert_eq!(beamball(&["basin", "--gamma", "10"]).status.code(), Some(3));
    // Help is not an error.
    assert_eq!(beamball(&["--help"]).status.code(), Some(0));
}

#[test]
fn circular_search_with_large_gain() {
    let o = beamball(&["search", "--variant", "circular", "--gamma", "80"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("bound = ")).unwrap();
    let v: f64 = line["bound = ".len()..].split_whitespace().next().unwrap().parse().unwrap();
    assert!(v > 0.44 && v < 0.469, "{v}");
}
