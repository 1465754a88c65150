use dcbf_cli::{min_dist_cell, parse_seeds, summarize, summary_csv, summary_table, SweepRun, SUMMARY_HEADER};
use dcbf_core::planner::PlannerKind;
use dcbf_core::sim::{Outcome, RunMetrics};

fn metrics(min_dist: f64, outcome: Outcome, cons: Option<f64>, reac: Option<f64>, var: Option<f64>) -> RunMetrics {
    RunMetrics {
        min_dist,
        cons_time: cons,
        reac_time: reac,
        speed_var: var,
        collided: outcome == Outcome::Collision,
        outcome,
        all_optimal: true,
        min_audit_h: min_dist,
    }
}

fn ok(planner: PlannerKind, seed: u64, m: RunMetrics) -> SweepRun {
    SweepRun {
        planner,
        seed,
        result: Ok(m),
    }
}

#[test]
fn means_skip_missing_values_and_count_collisions_as_zero() {
    let runs = vec![
        ok(
            PlannerKind::Kf,
            1,
            metrics(1.0, Outcome::Goal, Some(20.0), Some(1.0), Some(0.1)),
        ),
        ok(
            PlannerKind::Kf,
            2,
            metrics(0.0, Outcome::Collision, None, Some(3.0), None),
        ),
        ok(
            PlannerKind::Kf,
            3,
            metrics(2.0, Outcome::Timeout, None, None, Some(0.3)),
        ),
        SweepRun {
            planner: PlannerKind::Kf,
            seed: 4,
            result: Err("diverged".into()),
        },
    ];
    let rows = summarize(&runs, &[PlannerKind::Kf, PlannerKind::Dcbf]);
    let kf = &rows[0];
    assert_eq!((kf.runs, kf.failed, kf.collided), (4, 1, 1));
    assert_eq!(kf.min_dist, Some(1.0));
    assert_eq!(kf.cons_time, Some(20.0));
    assert_eq!(kf.reac_time, Some(2.0));
    assert!((kf.speed_var.unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(min_dist_cell(kf), "1.000(1/3 collided)");

    // a planner with no runs still gets a row
    let dcbf = &rows[1];
    assert_eq!((dcbf.runs, dcbf.min_dist), (0, None));
    assert_eq!(min_dist_cell(dcbf), "-");

    let csv = summary_csv(&rows);
    assert_eq!(csv.lines().next(), Some(SUMMARY_HEADER));
    assert!(csv.contains("\nmpc-dcbf,0,0,0,,,,\n"));
    let table = summary_table(&rows);
    assert!(table.contains("mpc-kf [1 failed]"));
}

#[test]
fn all_collided_shows_marker() {
    let runs = vec![
        ok(
            PlannerKind::Euclid,
            1,
            metrics(0.0, Outcome::Collision, None, None, None),
        ),
        ok(
            PlannerKind::Euclid,
            2,
            metrics(0.0, Outcome::Collision, None, Some(2.0), None),
        ),
    ];
    let rows = summarize(&runs, &[PlannerKind::Euclid]);
    assert_eq!(min_dist_cell(&rows[0]), "0(collided)");
    let table = summary_table(&rows);
    let widths: Vec<usize> = table.lines().map(str::len).collect();
    assert!(widths.windows(2).all(|w| w[0] == w[1]), "{table}");
}

#[test]
fn seed_lists() {
    assert_eq!(parse_seeds("1, 2,3").unwrap(), vec![1, 2, 3]);
    assert!(parse_seeds("").is_err());
    assert!(parse_seeds("1,x").is_err());
}
