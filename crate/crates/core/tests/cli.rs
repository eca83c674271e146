use std::path::Path;
use std::process::{Command, Output};

use removability::cli::{parse_report, Table};
use removability::criterion::GraphSample;
use removability::exact::to_f64;

fn removability(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_removability"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn solve_prints_pair_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = removability(&["solve", "--alpha", "0.6", "--p", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let pairs = parse_report(&stdout(&out)).unwrap();
    let get = |k: &str| pairs.iter().find(|p| p.0 == k).map(|p| p.1.as_str());
    assert_eq!(get("a"), Some("12"));
    assert_eq!(get("b"), Some("22"));
    assert_eq!(get("condition1.ratio"), Some("1/2"));
}

#[test]
fn infeasible_solve_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = removability(&["solve", "--alpha", "0.67", "--p", "2", "--bound", "256"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn build_writes_increasing_polyline_and_raster() {
    let dir = tempfile::tempdir().unwrap();
    let out = removability(&["build", "--a", "2", "--b", "2", "--depth", "3", "--out", "g.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let graph = GraphSample::from_csv(&csv).unwrap();
    assert!(graph.points().windows(2).all(|w| w[1].0 > w[0].0));
    let pgm = std::fs::read_to_string(dir.path().join("g.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n# scale = 255\n32 32\n255\n"));
    assert!(!dir.path().join("g.u.csv").exists());
}

#[test]
fn exact_build_round_trips_through_export() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["build", "--a", "2", "--b", "2", "--depth", "2", "--grid", "8", "--mode", "exact", "--out", "g.csv"];
    assert_eq!(removability(&args, dir.path()).status.code(), Some(0));
    let exact = std::fs::read_to_string(dir.path().join("g.u.csv")).unwrap();
    assert!(exact.lines().skip(1).any(|l| l.contains('/')));
    let out = removability(&["export", "--in", "g.u.csv", "--mode", "exact"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), exact);
    let decimal = removability(&["export", "--in", "g.u.csv"], dir.path());
    let decimal = Table::parse(&stdout(&decimal)).unwrap();
    let exact = Table::parse(&exact).unwrap();
    assert_eq!(decimal.header, exact.header);
    for (d, e) in decimal.rows.iter().flatten().zip(exact.rows.iter().flatten()) {
        assert_eq!(to_f64(d), to_f64(e));
    }
}

#[test]
fn verify_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["verify", "--a", "2", "--b", "2", "--depth", "3", "--out", out];
    assert_eq!(removability(&args("r1.txt"), dir.path()).status.code(), Some(0));
    assert_eq!(removability(&args("r2.txt"), dir.path()).status.code(), Some(0));
    let r1 = std::fs::read(dir.path().join("r1.txt")).unwrap();
    let r2 = std::fs::read(dir.path().join("r2.txt")).unwrap();
    assert_eq!(r1, r2);
    let text = String::from_utf8(r1).unwrap();
    for label in ["DefAn", "derAn", "condition1", "condition2"] {
        assert!(text.lines().any(|l| l.starts_with(label)), "{label} missing");
    }
    assert!(text.contains("machine.status = pass\n"));
    let exported = removability(&["export", "--in", "r1.txt"], dir.path());
    assert_eq!(stdout(&exported), text);
}

#[test]
fn failing_check_exits_two_and_names_the_inequality() {
    let dir = tempfile::tempdir().unwrap();
    // N > M breaks condition1 at p = 2: 2N/M² = 1.
    let out = removability(&["verify", "--a", "2", "--b", "3", "--depth", "2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("violated: condition1"));
    assert!(stdout(&out).contains("machine.status = fail\n"));
}

#[test]
fn criterion_reports_power_law_integral() {
    let dir = tempfile::tempdir().unwrap();
    let out = removability(&["criterion", "--alpha", "0.7", "--p", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("integral = converges, value 7.000000\n"));
}

#[test]
fn io_and_format_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(removability(&["export", "--in", "missing.csv"], dir.path()).status.code(), Some(3));
    std::fs::write(dir.path().join("bad.csv"), "x,y\n0,1\n0.5,oops\n").unwrap();
    assert_eq!(removability(&["export", "--in", "bad.csv"], dir.path()).status.code(), Some(3));
    std::fs::write(dir.path().join("bad.pgm"), "P2\n2 2\n255\n1 2\n").unwrap();
    assert_eq!(removability(&["export", "--in", "bad.pgm"], dir.path()).status.code(), Some(3));
    std::fs::write(dir.path().join("g.csv"), "x,y\n0.2,0\n0.1,1\n").unwrap();
    assert_eq!(removability(&["criterion", "--in", "g.csv", "--p", "2"], dir.path()).status.code(), Some(3));
}

#[test]
fn qc_emits_beltrami_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = removability(&["qc", "--a", "3", "--b", "2", "--depth", "2", "--grid", "4"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("x,y,u_y,mu_abs,level\n"));
    let table = Table::parse(&text).unwrap();
    assert!(table.rows.iter().all(|r| to_f64(&r[3]) < 1.0));
}
