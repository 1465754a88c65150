use std::path::Path;
use std::process::{Command, Output};

use dcbf_core::scenario::{crossing, Scenario};

fn dcbf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcbf"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DCBF_LOG")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_planner_lists_valid_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcbf(&["run", "--planner", "mpc-magic"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for k in ["mpc-euclid", "mpc-cbf", "mpc-kf", "mpc-cbf-curvefit", "mpc-dcbf"] {
        assert!(err.contains(k), "{err}");
    }
}

#[test]
fn malformed_scenario_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "name = \"x\"\nduration = [\n").unwrap();
    let o = dcbf(&["validate", "--scenario", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2, column"), "{}", stderr(&o));
}

#[test]
fn bad_overrides_and_missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["validate", "--set", "planner.nope=1"][..],
        &["validate", "--set", "planner.gamma_cbf=1.5"],
        &["validate", "--scenario", "missing.toml"],
        &["run", "--bogus-flag"],
    ] {
        assert_eq!(dcbf(args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn empty_seed_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcbf(&["compare", "--seeds", ","], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed list is empty"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_print_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcbf(
        &[
            "validate",
            "--print",
            "--set",
            "planner.gamma_cbf=0.15",
            "--set",
            "seed=3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let printed = Scenario::from_toml_str(&stdout(&o)).unwrap();
    let expected = crossing()
        .with_overrides(&["planner.gamma_cbf=0.15", "seed=3"])
        .unwrap();
    assert_eq!(printed, expected);

    // the printed file is itself a valid --scenario input
    std::fs::write(dir.path().join("s.toml"), stdout(&o)).unwrap();
    let again = dcbf(&["validate", "--print", "--scenario", "s.toml"], dir.path());
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn timeout_run_exits_3_with_identical_metrics_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "run",
            "--set",
            "duration=3",
            "--seed",
            "5",
            "--out",
            out,
            "--grid-at",
            "2",
        ]
    };
    let a = dcbf(&args("a"), dir.path());
    let b = dcbf(&args("b"), dir.path());
    assert_eq!(a.status.code(), Some(3), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(3));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).lines().nth(1).unwrap().starts_with("mpc-dcbf,5,"));
    for f in [
        "metrics.csv",
        "run.ndjson",
        "trajectory.csv",
        "solver.csv",
        "grid.ndjson",
    ] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    assert!(dir.path().join("a/timing.csv").exists());
}

#[test]
fn collision_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcbf(&["run", "--planner", "mpc-euclid"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().contains(",collision,"));
}

#[test]
fn compare_writes_table_with_collided_marker() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcbf(
        &[
            "compare",
            "--planners",
            "mpc-euclid,mpc-dcbf",
            "--seeds",
            "7",
            "--out",
            "cmp",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("| mpc-")).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("0(collided)"), "{table}");
    assert!(!rows[1].contains("collided"));

    let out = dir.path().join("cmp");
    assert_eq!(std::fs::read_to_string(out.join("summary.txt")).unwrap(), table);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some(dcbf_cli::SUMMARY_HEADER));
    assert!(summary.lines().nth(1).unwrap().starts_with("mpc-euclid,1,0,1,0,"));
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    for p in ["mpc-euclid", "mpc-dcbf"] {
        assert!(out.join(p).join("seed-7").join("run.ndjson").exists());
    }
}
