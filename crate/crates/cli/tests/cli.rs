use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surrogate-fem"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_records(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn solve_writes_one_row_per_macro_level() {
    let dir = TempDir::new().unwrap();
    let o = run(&["solve", "--benchmark", "scalar", "--q", "2", "--m", "5", "--macro-levels", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv_records(&dir.path().join("results.csv"));
    assert_eq!(header, ["H_ratio", "rel_l2", "eoc_l2", "rel_h1", "eoc_h1", "dofs", "rtts"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "1.0");
    assert_eq!(rows[1][0], "0.5");
    for name in ["timing.csv", "config.echo", "run.log"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let log = fs::read_to_string(dir.path().join("run.log")).unwrap();
    assert!(log.contains("cycles"), "{log}");
}

#[test]
fn spectrum_check_passes() {
    let dir = TempDir::new().unwrap();
    let o = run(&["spectrum-check", "--dim", "12", "--trials", "1000", "--seed", "7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("PASS"));
    let (_, rows) = csv_records(&dir.path().join("results.csv"));
    assert_eq!(rows.len(), 1001);
    assert!(rows.iter().all(|r| r.last().unwrap() == "true"));
}

#[test]
fn config_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let o = run(&["solve", "--q", "9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`q`"), "{}", stderr(&o));

    let o = run(&["sampling-study", "--m", "5", "--ls-offsets", "0,4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`ls_offsets`"), "{}", stderr(&o));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "q = 2\nsmoother = jacobi\n").unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`smoother`"), "{}", stderr(&o));
}

#[test]
fn io_errors_use_their_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.mesh");
    let o = run(&["solve", "--mesh", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run(&["solve", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn mesh_files_are_read() {
    let dir = TempDir::new().unwrap();
    let mesh = dir.path().join("square.mesh");
    fs::write(&mesh, "# unit square\nv 0 0\nv 1 0\nv 1 1\nv 0 1\nt 0 1 2\nt 0 2 3\n").unwrap();
    let from_file = dir.path().join("file");
    let builtin = dir.path().join("builtin");
    let o = run(&["solve", "--mesh", mesh.to_str().unwrap(), "--m", "4"], &from_file);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["solve", "--m", "4"], &builtin);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(from_file.join("results.csv")).unwrap(),
        fs::read(builtin.join("results.csv")).unwrap()
    );

    fs::write(&mesh, "v 0 0\nv 1 0\nt 0 1 2\n").unwrap();
    let o = run(&["solve", "--mesh", mesh.to_str().unwrap()], &from_file);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("`mesh`"), "{}", stderr(&o));
}

#[test]
fn deterministic_reruns_are_bit_identical() {
    let dir = TempDir::new().unwrap();
    let args = ["convergence", "--m", "4", "--q", "1", "--macro-levels", "2", "--deterministic", "true"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run(&[&args[..], &["--threads", "1"]].concat(), &a);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[&args[..], &["--threads", "2"]].concat(), &b);
    assert!(o.status.success(), "{}", stderr(&o));
    let ra = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("results.csv")).unwrap());
    let (_, rows) = csv_records(&a.join("results.csv"));
    assert!(rows.iter().all(|r| r[6].is_empty()), "rtts is timing-derived");
}

#[test]
fn config_echo_round_trips() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    let o = run(&["solve", "--q", "3", "--m", "4", "--macro-levels", "2", "--rel-tol", "1e-9"], &first);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = first.join("config.echo");
    let second = dir.path().join("second");
    let o = run(&["solve", "--config", echo.to_str().unwrap()], &second);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(first.join("results.csv")).unwrap(), fs::read(second.join("results.csv")).unwrap());
    let echoed = fs::read_to_string(second.join("config.echo")).unwrap();
    let original = fs::read_to_string(&echo).unwrap();
    let strip = |s: &str| s.lines().filter(|l| !l.starts_with("out ")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&echoed), strip(&original));
    assert!(original.contains("q = 3\n") && original.contains("rel_tol = 0.000000001\n"), "{original}");
}

#[test]
fn plaplacian_writes_both_trajectories() {
    let dir = TempDir::new().unwrap();
    let o = run(&["plaplacian", "--m", "5", "--q", "3", "--t-end", "0.02", "--dump", "true"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv_records(&dir.path().join("results.csv"));
    assert_eq!(header[0], "method");
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][0], "standard");
    assert_eq!(rows[3][0], "surrogate");
    let (_, diff) = csv_records(&dir.path().join("difference.csv"));
    let rel: f64 = diff[0][1].parse().unwrap();
    assert!(rel > 0.0 && rel < 1e-2, "{rel}");
    let dump = fs::read_to_string(dir.path().join("standard.dat")).unwrap();
    assert!(dump.lines().all(|l| l.split_whitespace().count() == 3));
}

#[test]
fn picard_failure_is_a_solver_error_with_a_state_dump() {
    let dir = TempDir::new().unwrap();
    let o = run(&["plaplacian", "--m", "4", "--surrogate", "false", "--max-picard", "1"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("Picard"), "{}", stderr(&o));
    let dumps: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("plaplacian_standard_step"))
        .collect();
    assert_eq!(dumps.len(), 1);
}

#[test]
fn bench_mvp_checks_apply_against_assembly() {
    let dir = TempDir::new().unwrap();
    let o = run(&["bench-mvp", "--m", "5", "--degrees", "2,8", "--reps", "5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, checks) = csv_records(&dir.path().join("results.csv"));
    assert_eq!(checks.len(), 3);
    assert!(checks.iter().all(|r| r.last().unwrap() == "true"));
    let (header, timing) = csv_records(&dir.path().join("timing.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let ops: Vec<&str> = timing.iter().map(|r| r[col("operator")].as_str()).collect();
    assert_eq!(ops, ["standard-on-the-fly", "standard-cached", "surrogate", "surrogate"]);
    assert!(timing.iter().all(|r| r[col("median_secs")].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn reps_below_five_are_rejected() {
    let dir = TempDir::new().unwrap();
    let o = run(&["bench-mvp", "--reps", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`reps`"));
}
