//! WebAssembly bindings for the browser demo. Each export returns JSON; the
//! plain functions underneath are what the native tests exercise.

use dcbf_core::geometry::{Ellipse, RobotState, Vec2};
use dcbf_core::planner::{barrier, PlannerKind};
use dcbf_core::scenario::crossing;
use dcbf_core::sim::{run, RunMetrics};
use dcbf_core::tracking::{InflationMode, PredictedStep, Tracker, TrackerParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Barrier value at the centers of an `nx × ny` lattice over
/// `[x0, x1] × [y0, y1]`, row-major from `y0`. NaN at the ellipse center.
pub fn barrier_grid(e: &Ellipse, d_safe: f64, extent: [f64; 4], nx: usize, ny: usize) -> Vec<f64> {
    let [x0, y0, x1, y1] = extent;
    let (dx, dy) = ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64);
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let p = RobotState::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy, 0.0);
            out.push(barrier(&p, e, d_safe).map_or(f64::NAN, |b| b.h));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanRequest {
    pub velocity: Vec2,
    /// Standard deviation of the measured centers (m).
    pub noise: f64,
    pub jerk_psd: f64,
    pub inflation: InflationMode,
    pub frames: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for FanRequest {
    fn default() -> Self {
        Self {
            velocity: Vec2::new(1.0, 0.3),
            noise: 0.05,
            jerk_psd: TrackerParams::default().process_noise.jerk_psd,
            inflation: InflationMode::MinkowskiRoot,
            frames: 20,
            horizon: 25,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fan {
    pub truth: Vec<Ellipse>,
    pub measurements: Vec<Ellipse>,
    pub steps: Vec<PredictedStep>,
}

/// Tracks a noisy 0.5 × 0.3 m ellipse moving at constant velocity from the
/// origin, then predicts it over the horizon.
pub fn prediction_fan(req: &FanRequest) -> Result<Fan, String> {
    let mut params = TrackerParams::default();
    params.process_noise.jerk_psd = req.jerk_psd;
    params.inflation = req.inflation;
    let mut tracker = Tracker::new(params).map_err(|e| e.to_string())?;
    let normal = Normal::new(0.0, req.noise.max(0.0)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let heading = req.velocity.y.atan2(req.velocity.x);
    let at = |k: usize| req.velocity.scale(k as f64 * params.dt);
    let mut truth = Vec::new();
    let mut measurements = Vec::new();
    for k in 0..req.frames.max(2) {
        let c = at(k);
        truth.push(Ellipse::new(c.x, c.y, 0.5, 0.3, heading).map_err(|e| e.to_string())?);
        let m = Ellipse::new(
            c.x + normal.sample(&mut rng),
            c.y + normal.sample(&mut rng),
            0.5,
            0.3,
            heading,
        )
        .map_err(|e| e.to_string())?;
        tracker.update(&[m], k as f64 * params.dt).map_err(|e| e.to_string())?;
        measurements.push(m);
    }
    let now = truth.len() - 1;
    for k in 1..=req.horizon {
        let c = at(now + k);
        truth.push(Ellipse::new(c.x, c.y, 0.5, 0.3, heading).map_err(|e| e.to_string())?);
    }
    let pred = tracker
        .predictions(req.horizon)
        .into_iter()
        .next()
        .ok_or("no track formed")?;
    Ok(Fan {
        truth,
        measurements,
        steps: pred.steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTick {
    pub t: f64,
    pub robot: [f64; 3],
    pub v: f64,
    pub obstacles: Vec<Ellipse>,
    /// Every fifth predicted ellipse of each track.
    pub fan: Vec<Ellipse>,
    pub plan: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimView {
    pub planner: PlannerKind,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub robot_radius: f64,
    pub metrics: RunMetrics,
    pub ticks: Vec<SimTick>,
}

/// Runs the built-in crossing scenario.
pub fn simulate_crossing(planner: &str, seed: u64, gamma_cbf: f64) -> Result<SimView, String> {
    let kind: PlannerKind = planner
        .parse()
        .map_err(|e: dcbf_core::planner::UnknownPlanner| e.to_string())?;
    let mut scenario = crossing()
        .with_overrides(&[format!("planner.gamma_cbf={gamma_cbf}")])
        .map_err(|e| e.to_string())?;
    scenario.seed = seed;
    let r = run(&scenario, kind).map_err(|e| e.to_string())?;
    let ticks = r
        .records
        .iter()
        .map(|t| SimTick {
            t: t.t,
            robot: [t.robot.x, t.robot.y, t.robot.heading],
            v: t.control.v,
            obstacles: t.obstacles.iter().map(|o| o.ellipse).collect(),
            fan: t
                .predictions
                .iter()
                .filter(|p| p.k % 5 == 0)
                .map(|p| p.ellipse)
                .collect(),
            plan: t.solver.as_ref().map(|s| s.plan.clone()).unwrap_or_default(),
        })
        .collect();
    Ok(SimView {
        planner: kind,
        start: scenario.robot.start,
        goal: scenario.robot.goal,
        robot_radius: scenario.robot.radius,
        metrics: r.metrics,
        ticks,
    })
}

fn to_js<T: Serialize>(v: &Result<T, String>) -> Result<String, JsError> {
    match v {
        Ok(v) => serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string())),
        Err(e) => Err(JsError::new(e)),
    }
}

#[wasm_bindgen(js_name = barrierField)]
#[allow(clippy::too_many_arguments)]
pub fn barrier_field_js(
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    d_safe: f64,
    half_width: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    let e = Ellipse::new(cx, cy, a, b, theta).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(barrier_grid(
        &e,
        d_safe,
        [-half_width, -half_width, half_width, half_width],
        n,
        n,
    ))
}

#[wasm_bindgen(js_name = barrierAt)]
#[allow(clippy::too_many_arguments)]
pub fn barrier_at_js(
    px: f64,
    py: f64,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    d_safe: f64,
) -> Result<f64, JsError> {
    let e = Ellipse::new(cx, cy, a, b, theta).map_err(|e| JsError::new(&e.to_string()))?;
    barrier(&RobotState::new(px, py, 0.0), &e, d_safe)
        .map(|b| b.h)
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = predictionFan)]
pub fn prediction_fan_js(
    vx: f64,
    vy: f64,
    noise: f64,
    jerk_psd: f64,
    conservative: bool,
    seed: u64,
) -> Result<String, JsError> {
    let req = FanRequest {
        velocity: Vec2::new(vx, vy),
        noise,
        jerk_psd,
        inflation: if conservative {
            InflationMode::Conservative
        } else {
            InflationMode::MinkowskiRoot
        },
        seed,
        ..FanRequest::default()
    };
    to_js(&prediction_fan(&req))
}

#[wasm_bindgen(js_name = simulateCrossing)]
pub fn simulate_crossing_js(planner: &str, seed: u64, gamma_cbf: f64) -> Result<String, JsError> {
    to_js(&simulate_crossing(planner, seed, gamma_cbf))
}
