use dcbf_core::geometry::{Ellipse, Vec2};
use dcbf_core::tracking::InflationMode;
use dcbf_web::{barrier_grid, prediction_fan, simulate_crossing, FanRequest};

#[test]
fn barrier_grid_matches_closed_form_on_a_circle() {
    let e = Ellipse::circle(Vec2::ZERO, 1.0).unwrap();
    let n = 40;
    let h = barrier_grid(&e, 0.25, [-2.0, -2.0, 2.0, 2.0], n, n);
    assert_eq!(h.len(), n * n);
    for j in 0..n {
        for i in 0..n {
            let x = -2.0 + (i as f64 + 0.5) * 0.1;
            let y = -2.0 + (j as f64 + 0.5) * 0.1;
            let want = x.hypot(y) - 1.0 - 0.25;
            assert!((h[j * n + i] - want).abs() < 1e-12, "({x}, {y})");
        }
    }
}

#[test]
fn barrier_grid_is_nan_only_at_the_center() {
    let e = Ellipse::new(0.5, 0.5, 1.0, 0.4, 0.3).unwrap();
    let h = barrier_grid(&e, 0.0, [0.0, 0.0, 1.0, 1.0], 1, 1);
    assert!(h[0].is_nan());
    let h = barrier_grid(&e, 0.0, [0.0, 0.0, 1.0, 1.0], 2, 2);
    assert!(h.iter().all(|v| v.is_finite() && *v < 0.0));
}

#[test]
fn fan_spans_the_horizon_and_grows() {
    let fan = prediction_fan(&FanRequest::default()).unwrap();
    assert_eq!(fan.steps.len(), 26);
    assert_eq!(fan.measurements.len(), 20);
    assert_eq!(fan.truth.len(), 20 + 25);
    assert!(fan.steps.windows(2).all(|w| w[1].r >= w[0].r));
}

#[test]
fn fan_follows_noise_free_motion_and_covers_truth_under_noise() {
    let exact = prediction_fan(&FanRequest {
        noise: 0.0,
        ..FanRequest::default()
    })
    .unwrap();
    for (k, s) in exact.steps.iter().enumerate() {
        let miss = s.nominal.center().dist(exact.truth[19 + k].center());
        assert!(miss < 1e-3, "k = {k}: {miss}");
    }
    for seed in 1..8 {
        let fan = prediction_fan(&FanRequest {
            seed,
            ..FanRequest::default()
        })
        .unwrap();
        for (k, s) in fan.steps.iter().enumerate() {
            let miss = s.nominal.center().dist(fan.truth[19 + k].center());
            assert!(miss <= s.r, "seed {seed} k {k}: miss {miss} radius {}", s.r);
        }
    }
}

#[test]
fn conservative_fan_grows_axes_by_r() {
    let req = FanRequest {
        inflation: InflationMode::Conservative,
        ..FanRequest::default()
    };
    let fan = prediction_fan(&req).unwrap();
    for s in &fan.steps {
        assert!((s.ellipse.a() - s.nominal.a() - s.r).abs() < 1e-9);
    }
    let json = serde_json::to_value(&fan).unwrap();
    assert!(json["steps"][0]["ellipse"]["cx"].is_number());
}

#[test]
fn simulation_view_reports_metrics_and_rejects_unknown_planners() {
    let v = simulate_crossing("mpc-dcbf", 7, 0.15).unwrap();
    assert_eq!(v.metrics.outcome, dcbf_core::sim::Outcome::Goal);
    assert_eq!(v.ticks.len() as f64, v.metrics.cons_time.unwrap() / 0.1 + 1.0);
    assert!(v.ticks[..v.ticks.len() - 1].iter().all(|t| t.plan.len() == 26));
    assert!(v.ticks.last().unwrap().plan.is_empty());
    assert_eq!(v.ticks[0].obstacles.len(), 3);
    let err = simulate_crossing("mpc-nope", 7, 0.15).unwrap_err();
    assert!(err.contains("mpc-dcbf"), "{err}");
    assert!(simulate_crossing("mpc-dcbf", 7, 1.5).is_err());
}
