use std::path::Path;
use std::process::{Command, Output};

use fogsim::telemetry::{read_json, CSV_COLUMNS};

const SCENARIO: &str = "rounds = 3\nseed = 11\n[partition]\nn_clients = 6\nsamples_per_client = 40\ntest_samples = 100\n";

fn fogsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), SCENARIO).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_csv_to_stdout() {
    let dir = setup();
    let text = stdout(&fogsim(&["run", "s.toml"], dir.path()));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert_eq!(lines.len(), 4);
}

#[test]
fn run_writes_json_directory() {
    let dir = setup();
    stdout(&fogsim(&["run", "s.toml", "--out", "out", "--format", "json", "--scheduler", "random"], dir.path()));
    let recs = read_json(std::fs::File::open(dir.path().join("out/rounds.json")).unwrap()).unwrap();
    assert_eq!(recs.len(), 3);
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = setup();
    assert!(stdout(&fogsim(&["validate", "s.toml"], dir.path())).contains("ok"));

    std::fs::write(dir.path().join("bad.toml"), "[health_weights]\na1 = 0.5\na2 = 0.5\na3 = 0.5\n[partition]\nn_clients = 0\n").unwrap();
    let o = fogsim(&["validate", "bad.toml"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("health_weights") && err.contains("partition.n_clients"), "{err}");

    std::fs::write(dir.path().join("typo.toml"), "rouns = 3\n").unwrap();
    assert!(!fogsim(&["run", "typo.toml"], dir.path()).status.success());
    assert!(!fogsim(&["run", "missing.toml"], dir.path()).status.success());
}

#[test]
fn compare_lists_each_policy() {
    let dir = setup();
    let text = stdout(&fogsim(&["compare", "s.toml", "--policies", "fedfog,naive_faas"], dir.path()));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("fedfog,") && lines[2].starts_with("naive_faas,"));
}

#[test]
fn sweep_reads_grid() {
    let dir = setup();
    std::fs::write(dir.path().join("g.toml"), "cells = [[0.5, 0.4, 0.1], [0.7, 0.6, 0.05]]\n").unwrap();
    let text = stdout(&fogsim(&["sweep", "s.toml", "--grid", "g.toml", "--repeats", "2"], dir.path()));
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("theta_h,theta_e,theta_d,repeats"));
}

#[test]
fn bench_prints_table() {
    let dir = setup();
    let text = stdout(&fogsim(&["bench", "--clients", "8,16"], dir.path()));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,fedfog,naive_faas,random");
    assert!(lines[1].starts_with("8,") && lines[1].contains(",64,"));
}
