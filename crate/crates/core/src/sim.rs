//! Deterministic closed-loop simulation with scripted obstacles and planar
//! LiDAR returns, plus run metrics and log export.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LocalMapError, SimError};
use crate::geometry::{ControlInput, Ellipse, Point3, RobotState, Vec2};
use crate::localmap::{build_grid, obstacle_mask, ElevationGrid};
use crate::perception::{dbscan, min_bounding_ellipse};
use crate::planner::{
    barrier, dynamics_step, solve, variant_obstacles, ConstraintMode, MpcSolution, ObstacleView, PlannerKind,
    PlannerParams, SolveStatus, WarmStart,
};
use crate::scenario::{ObstacleConfig, PerceptionConfig, Scenario, SensorConfig, Shape};
use crate::tracking::{confidence, predict_trajectory, PredictedObstacle, Tracker, TrackerParams};

/// Planned control deviation that counts as a reaction (m/s, rad/s).
pub const REACTION_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleTruth {
    pub center: Vec2,
    pub shape: Shape,
    pub height: f64,
}

impl ObstacleTruth {
    pub fn at(cfg: &ObstacleConfig, t: f64) -> Self {
        Self {
            center: cfg.motion.position(t),
            shape: cfg.shape,
            height: cfg.height,
        }
    }
}

pub fn obstacle_states(scenario: &Scenario, t: f64) -> Vec<ObstacleTruth> {
    scenario.obstacles.iter().map(|o| ObstacleTruth::at(o, t)).collect()
}

/// Planar scan from the robot pose. Each beam returns its first hit, pushed
/// along the beam by Gaussian range noise and tagged with the obstacle
/// height; unobstructed ground rings yield points at zero height.
pub fn raycast(
    obstacles: &[ObstacleTruth],
    robot: &RobotState,
    sensor: &SensorConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Point3> {
    let origin = robot.position();
    let noise = Normal::new(0.0, sensor.noise_sigma).expect("validated sigma");
    let mut out = Vec::new();
    for i in 0..sensor.beams {
        let angle = robot.heading + std::f64::consts::TAU * i as f64 / sensor.beams as f64;
        let dir = Vec2::from_polar(1.0, angle);
        let hit = obstacles
            .iter()
            .filter_map(|o| o.shape.ray_hit(o.center, origin, dir).map(|t| (t, o.height)))
            .filter(|(t, _)| *t <= sensor.max_range)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let free = hit.map_or(sensor.max_range, |h| h.0);
        let mut r = sensor.ground_ring_step;
        while sensor.ground_ring_step > 0.0 && r <= sensor.ground_ring_max && r < free {
            let p = origin + dir.scale(r);
            out.push(Point3::new(p.x, p.y, 0.0));
            r += sensor.ground_ring_step;
        }
        if let Some((t, height)) = hit {
            let range = t + noise.sample(rng);
            let p = origin + dir.scale(range);
            out.push(Point3::new(p.x, p.y, height));
        }
    }
    out
}

/// Points → elevation grid → obstacle cells → clusters → bounding ellipses.
pub fn perceive(points: &[Point3], robot: &RobotState, cfg: &PerceptionConfig) -> Result<Vec<Ellipse>, LocalMapError> {
    perceive_with_grid(points, robot, cfg).map(|(_, e)| e)
}

/// Like [`perceive`], also returning the masked grid.
pub fn perceive_with_grid(
    points: &[Point3],
    robot: &RobotState,
    cfg: &PerceptionConfig,
) -> Result<(ElevationGrid, Vec<Ellipse>), LocalMapError> {
    let grid = build_grid(points, robot, &cfg.grid)?;
    let masked = obstacle_mask(&grid, &cfg.thresholds);
    let cells = masked.obstacle_cells();
    let clusters = dbscan(&cells, cfg.cluster.eps, cfg.cluster.min_pts);
    let ellipses = clusters
        .clusters
        .iter()
        .map(|c| min_bounding_ellipse(&c.members, &cfg.mbe))
        .collect();
    Ok((masked, ellipses))
}

/// Surface-to-surface distance between the robot disk and an obstacle,
/// clamped at zero.
pub fn surface_distance(o: &ObstacleTruth, p: Vec2, robot_radius: f64) -> f64 {
    (o.shape.distance(o.center, p) - robot_radius).max(0.0)
}

pub fn collides(obstacles: &[ObstacleTruth], p: Vec2, robot_radius: f64) -> bool {
    obstacles.iter().any(|o| o.shape.distance(o.center, p) <= robot_radius)
}

/// Ground-truth barrier value against the obstacle's audit ellipse.
pub fn audited_barrier(o: &ObstacleTruth, robot: &RobotState, d_safe: f64) -> f64 {
    let e = o.shape.audit_ellipse(o.center);
    barrier(robot, &e, d_safe).map_or(-(e.a() + d_safe), |b| b.h)
}

/// Advances the world by one step: the robot under `u`, obstacles by script.
pub fn step(
    scenario: &Scenario,
    t: f64,
    robot: &RobotState,
    u: ControlInput,
) -> (RobotState, Vec<ObstacleTruth>, bool) {
    let dt = scenario.planner.dt;
    let next = dynamics_step(robot, u, dt);
    let obstacles = obstacle_states(scenario, t + dt);
    let hit = collides(&obstacles, next.position(), scenario.robot.radius);
    (next, obstacles, hit)
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleRecord {
    pub name: String,
    pub center: [f64; 2],
    /// Audit ellipse of the footprint.
    pub ellipse: Ellipse,
    /// Audited barrier value for the robot pose of this tick.
    pub h: f64,
    /// Surface distance to the robot.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub label: u64,
    pub ellipse: Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub label: u64,
    pub k: usize,
    pub ellipse: Ellipse,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub status: SolveStatus,
    pub iterations: usize,
    pub qp_iterations: usize,
    pub cost: f64,
    pub max_violation: f64,
    #[serde(with = "inf_as_null")]
    pub min_residual: f64,
    pub converged: bool,
    /// Planned positions `x_0..x_N`.
    pub plan: Vec<[f64; 2]>,
}

impl SolverRecord {
    fn from_solution(sol: &MpcSolution) -> Self {
        Self {
            status: sol.status,
            iterations: sol.telemetry.iterations,
            qp_iterations: sol.telemetry.qp_iterations,
            cost: sol.telemetry.cost,
            max_violation: sol.telemetry.max_violation,
            min_residual: sol.min_residual(),
            converged: sol.telemetry.converged,
            plan: sol.states.iter().map(|s| [s.x, s.y]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub robot: RobotState,
    /// Applied input; zero on the terminal record.
    pub control: ControlInput,
    pub obstacles: Vec<ObstacleRecord>,
    pub ellipses: Vec<LabeledRecord>,
    pub predictions: Vec<PredictionRecord>,
    pub solver: Option<SolverRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Goal,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Smallest surface distance to any obstacle; infinite without obstacles.
    #[serde(with = "inf_as_null")]
    pub min_dist: f64,
    /// Time to reach the goal.
    pub cons_time: Option<f64>,
    /// Delay between the first detection and the first planned deviation
    /// from the obstacle-free plan.
    pub reac_time: Option<f64>,
    /// Variance of the commanded speed from the first detection on.
    pub speed_var: Option<f64>,
    pub collided: bool,
    pub outcome: Outcome,
    /// Whether every solve ended with all obstacle rows satisfied.
    pub all_optimal: bool,
    /// Smallest audited ground-truth barrier value.
    #[serde(with = "inf_as_null")]
    pub min_audit_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickTiming {
    pub t: f64,
    pub perception_ms: f64,
    pub tracking_ms: f64,
    pub planning_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub scenario: String,
    pub planner: PlannerKind,
    pub seed: u64,
    pub dt: f64,
    pub d_safe: f64,
    pub gamma_cbf: f64,
    pub robot_radius: f64,
    pub obstacles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub header: RunHeader,
    pub records: Vec<TickRecord>,
    pub metrics: RunMetrics,
    /// Wall-clock telemetry; kept apart from the deterministic log.
    pub timings: Vec<TickTiming>,
    pub grids: Vec<GridSnapshot>,
}

/// Masked local map captured at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSnapshot {
    pub t: f64,
    pub grid: ElevationGrid,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Times (s) at which to keep the local map; each matches the nearest tick.
    pub grid_at: Vec<f64>,
}

#[cfg(not(target_arch = "wasm32"))]
mod clock {
    pub struct Stopwatch(std::time::Instant);

    impl Stopwatch {
        pub fn start() -> Self {
            Self(std::time::Instant::now())
        }

        pub fn lap_ms(&mut self) -> f64 {
            let now = std::time::Instant::now();
            let ms = (now - self.0).as_secs_f64() * 1e3;
            self.0 = now;
            ms
        }
    }
}

#[cfg(target_arch = "wasm32")]
mod clock {
    pub struct Stopwatch;

    impl Stopwatch {
        pub fn start() -> Self {
            Self
        }

        pub fn lap_ms(&mut self) -> f64 {
            0.0
        }
    }
}

fn views(tracker: &Tracker, horizon: usize) -> Vec<ObstacleView> {
    tracker
        .tracks()
        .map(|t| ObstacleView {
            label: t.label,
            measured: t.last_measurement,
            centers: t.centers.iter().copied().collect(),
            prediction: predict_trajectory(&t.state, tracker.params(), horizon, t.label),
        })
        .collect()
}

fn variance(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some(xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Runs one closed-loop episode.
pub fn run(scenario: &Scenario, kind: PlannerKind) -> Result<ScenarioRun, SimError> {
    run_with(scenario, kind, &RunOptions::default())
}

pub fn run_with(scenario: &Scenario, kind: PlannerKind, opts: &RunOptions) -> Result<ScenarioRun, SimError> {
    let mut params: PlannerParams = scenario.planner;
    if params.state_bounds.is_none() {
        params.state_bounds = Some(scenario.world.state_bounds());
    }
    let dt = params.dt;
    let n = params.horizon;
    let tracker_params: TrackerParams = scenario.tracker;
    let mut tracker = Tracker::new(tracker_params)?.with_center_window(10);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let path = scenario.reference_path();
    let goal = Vec2::from(scenario.robot.goal);
    let radius = scenario.robot.radius;

    let header = RunHeader {
        scenario: scenario.name.clone(),
        planner: kind,
        seed: scenario.seed,
        dt,
        d_safe: params.d_safe,
        gamma_cbf: params.gamma_cbf,
        robot_radius: radius,
        obstacles: scenario.obstacles.iter().map(|o| o.name.clone()).collect(),
    };

    let mut robot = RobotState::new(scenario.robot.start[0], scenario.robot.start[1], scenario.robot.heading);
    let mut warm = WarmStart::cold(ControlInput::ZERO);
    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut grids = Vec::new();
    let mut min_dist = f64::INFINITY;
    let mut min_audit_h = f64::INFINITY;
    let mut all_optimal = true;
    let mut first_detection: Option<f64> = None;
    let mut reac_time: Option<f64> = None;
    let mut speeds_after_detection = Vec::new();

    let obstacle_records = |robot: &RobotState, truth: &[ObstacleTruth]| -> Vec<ObstacleRecord> {
        truth
            .iter()
            .zip(&scenario.obstacles)
            .map(|(o, cfg)| ObstacleRecord {
                name: cfg.name.clone(),
                center: [o.center.x, o.center.y],
                ellipse: o.shape.audit_ellipse(o.center),
                h: audited_barrier(o, robot, params.d_safe),
                distance: surface_distance(o, robot.position(), radius),
            })
            .collect()
    };

    let mut k: u64 = 0;
    let outcome = loop {
        let t = k as f64 * dt;
        let truth = obstacle_states(scenario, t);
        let obs_records = obstacle_records(&robot, &truth);
        for r in &obs_records {
            min_dist = min_dist.min(r.distance);
            min_audit_h = min_audit_h.min(r.h);
        }
        let terminal = if collides(&truth, robot.position(), radius) {
            Some(Outcome::Collision)
        } else if robot.position().dist(goal) <= scenario.robot.goal_tolerance {
            Some(Outcome::Goal)
        } else if t >= scenario.duration - 1e-9 {
            Some(Outcome::Timeout)
        } else {
            None
        };
        if let Some(outcome) = terminal {
            records.push(TickRecord {
                t,
                robot,
                control: ControlInput::ZERO,
                obstacles: obs_records,
                ellipses: Vec::new(),
                predictions: Vec::new(),
                solver: None,
            });
            break outcome;
        }

        let mut watch = clock::Stopwatch::start();
        let points = raycast(&truth, &robot, &scenario.sensor, &mut rng);
        let (grid, ellipses) = perceive_with_grid(&points, &robot, &scenario.perception)?;
        let perception_ms = watch.lap_ms();
        if opts.grid_at.iter().any(|&g| (g - t).abs() < 0.5 * dt) {
            grids.push(GridSnapshot { t, grid });
        }
        tracker.update(&ellipses, t)?;
        let obstacle_views = views(&tracker, n);
        let tracking_ms = watch.lap_ms();

        let reference = path.reference(&robot, n, dt);
        let obstacles: Vec<PredictedObstacle> = variant_obstacles(kind, &obstacle_views, t, &params);
        let sol = solve(&robot, &reference, &obstacles, kind.mode(), &params, &warm)?;
        let planning_ms = watch.lap_ms();
        if sol.status != SolveStatus::Optimal {
            all_optimal = false;
        }
        let u = sol.first_control();

        if first_detection.is_none() && !ellipses.is_empty() {
            first_detection = Some(t);
        }
        if let (Some(t0), None) = (first_detection, reac_time) {
            let free = solve(&robot, &reference, &[], ConstraintMode::Decay, &params, &warm)?;
            let du = free.first_control();
            if (u.v - du.v).hypot(u.omega - du.omega) > REACTION_THRESHOLD {
                reac_time = Some(t - t0);
            }
        }
        if first_detection.is_some() {
            speeds_after_detection.push(u.v);
        }

        let ellipse_records = tracker
            .tracks()
            .filter(|tr| tr.misses == 0)
            .map(|tr| LabeledRecord {
                label: tr.label,
                ellipse: tr.last_measurement,
            })
            .collect();
        let predictions = obstacles
            .iter()
            .flat_map(|p| {
                p.steps.iter().enumerate().map(move |(k, s)| PredictionRecord {
                    label: p.label,
                    k,
                    ellipse: s.ellipse,
                    r: s.r,
                })
            })
            .collect();
        records.push(TickRecord {
            t,
            robot,
            control: u,
            obstacles: obs_records,
            ellipses: ellipse_records,
            predictions,
            solver: Some(SolverRecord::from_solution(&sol)),
        });
        timings.push(TickTiming {
            t,
            perception_ms,
            tracking_ms,
            planning_ms,
            total_ms: perception_ms + tracking_ms + planning_ms,
        });

        robot = dynamics_step(&robot, u, dt);
        warm = WarmStart::from_solution(&sol);
        k += 1;
    };

    let collided = outcome == Outcome::Collision;
    let metrics = RunMetrics {
        min_dist: if collided { 0.0 } else { min_dist },
        cons_time: (outcome == Outcome::Goal).then(|| records.last().expect("terminal record").t),
        reac_time,
        speed_var: if collided {
            None
        } else {
            variance(&speeds_after_detection)
        },
        collided,
        outcome,
        all_optimal,
        min_audit_h,
    };
    Ok(ScenarioRun {
        header,
        records,
        metrics,
        timings,
        grids,
    })
}

/// One frame of the position-confidence experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSample {
    pub t: f64,
    /// Mean squared error of measured centers against truth over the window.
    pub xi_p: f64,
    pub xi_eta: f64,
    pub xi_p_hat: f64,
}

/// A cylinder observed by a robot sweeping back and forth along x, so the
/// cylinder repeatedly crosses the edge of the local window and its visible
/// part grows and shrinks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScene {
    pub radius: f64,
    /// Cylinder start and velocity.
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    /// Robot x-offset from the cylinder: `offset + amplitude·sin(2πt/period)`.
    pub offset: f64,
    pub amplitude: f64,
    pub period: f64,
    pub lateral: f64,
    pub frames: usize,
    pub seed: u64,
}

impl Default for ConfidenceScene {
    fn default() -> Self {
        Self {
            radius: 0.5,
            start: [0.0, 0.0],
            velocity: [0.0, 0.0],
            offset: 5.0,
            amplitude: 1.2,
            period: 6.0,
            lateral: 2.0,
            frames: 480,
            seed: 11,
        }
    }
}

/// Runs the confidence experiment; frames before the window fills are
/// skipped, as are frames where the cylinder is not detected.
pub fn confidence_trace(
    scene: &ConfidenceScene,
    sensor: &SensorConfig,
    perception: &PerceptionConfig,
    params: &TrackerParams,
) -> Vec<ConfidenceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let shape = Shape::Cylinder { radius: scene.radius };
    let m = params.window;
    let mut window: std::collections::VecDeque<(Ellipse, Vec2)> = Default::default();
    let mut out = Vec::new();
    for f in 0..scene.frames {
        let t = f as f64 * params.dt;
        let center = Vec2::from(scene.start) + Vec2::from(scene.velocity).scale(t);
        let dx = scene.offset + scene.amplitude * (std::f64::consts::TAU * t / scene.period).sin();
        let robot = RobotState::new(center.x - dx, center.y - scene.lateral, 0.0);
        let truth = [ObstacleTruth {
            center,
            shape,
            height: 1.5,
        }];
        let points = raycast(&truth, &robot, sensor, &mut rng);
        let Ok(ellipses) = perceive(&points, &robot, perception) else {
            continue;
        };
        let Some(e) = ellipses
            .into_iter()
            .min_by(|a, b| a.center().dist(center).total_cmp(&b.center().dist(center)))
        else {
            window.clear();
            continue;
        };
        window.push_back((e, center));
        while window.len() > m {
            window.pop_front();
        }
        if window.len() < m {
            continue;
        }
        let shapes: Vec<Ellipse> = window.iter().map(|w| w.0).collect();
        let (xi_eta, xi_p_hat) = confidence(&shapes, params).expect("full window");
        let xi_p = window.iter().map(|(e, c)| (e.center() - *c).norm_sq()).sum::<f64>() / (m - 1) as f64;
        out.push(ConfidenceSample {
            t,
            xi_p,
            xi_eta,
            xi_p_hat,
        });
    }
    out
}

/// Pearson correlation coefficient; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum LogLine<'a> {
    Header(&'a RunHeader),
    Tick(&'a TickRecord),
    Metrics(&'a RunMetrics),
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub const METRICS_HEADER: &str =
    "planner,seed,min_dist,cons_time,reac_time,speed_var,collided,outcome,all_optimal,min_audit_h";

impl ScenarioRun {
    /// Newline-delimited JSON: a header line, one line per tick, a metrics line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let mut push = |line: LogLine| {
            out.push_str(&serde_json::to_string(&line).expect("log serializes"));
            out.push('\n');
        };
        push(LogLine::Header(&self.header));
        for r in &self.records {
            push(LogLine::Tick(r));
        }
        push(LogLine::Metrics(&self.metrics));
        out
    }

    pub fn metrics_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.header.planner,
            self.header.seed,
            fmt_f(m.min_dist),
            fmt_opt(m.cons_time),
            fmt_opt(m.reac_time),
            fmt_opt(m.speed_var),
            m.collided,
            serde_json::to_value(m.outcome)
                .expect("outcome")
                .as_str()
                .expect("string"),
            m.all_optimal,
            fmt_f(m.min_audit_h),
        )
    }

    /// Flat per-signal tables keyed by file name.
    pub fn csv_tables(&self) -> Vec<(&'static str, String)> {
        let mut traj = String::from("t,x,y,heading,v,omega\n");
        let mut obst = String::from("t,name,cx,cy,a,b,theta\n");
        let mut barrier = String::from("t,name,h,distance\n");
        let mut ell = String::from("t,label,cx,cy,a,b,theta\n");
        let mut pred = String::from("t,label,k,cx,cy,a,b,theta,r\n");
        let mut solver = String::from("t,status,iterations,qp_iterations,cost,max_violation,min_residual,converged\n");
        for r in &self.records {
            let c = r.control;
            let _ = writeln!(
                traj,
                "{},{},{},{},{},{}",
                r.t, r.robot.x, r.robot.y, r.robot.heading, c.v, c.omega
            );
            for o in &r.obstacles {
                let e = &o.ellipse;
                let _ = writeln!(
                    obst,
                    "{},{},{},{},{},{},{}",
                    r.t,
                    o.name,
                    o.center[0],
                    o.center[1],
                    e.a(),
                    e.b(),
                    e.theta()
                );
                let _ = writeln!(barrier, "{},{},{},{}", r.t, o.name, fmt_f(o.h), o.distance);
            }
            for l in &r.ellipses {
                let e = &l.ellipse;
                let _ = writeln!(
                    ell,
                    "{},{},{},{},{},{},{}",
                    r.t,
                    l.label,
                    e.cx(),
                    e.cy(),
                    e.a(),
                    e.b(),
                    e.theta()
                );
            }
            for p in &r.predictions {
                let e = &p.ellipse;
                let _ = writeln!(
                    pred,
                    "{},{},{},{},{},{},{},{},{}",
                    r.t,
                    p.label,
                    p.k,
                    e.cx(),
                    e.cy(),
                    e.a(),
                    e.b(),
                    e.theta(),
                    p.r
                );
            }
            if let Some(s) = &r.solver {
                let status = serde_json::to_value(s.status).expect("status");
                let _ = writeln!(
                    solver,
                    "{},{},{},{},{},{},{},{}",
                    r.t,
                    status.as_str().expect("string"),
                    s.iterations,
                    s.qp_iterations,
                    s.cost,
                    s.max_violation,
                    fmt_f(s.min_residual),
                    s.converged
                );
            }
        }
        let metrics = format!("{METRICS_HEADER}\n{}\n", self.metrics_row());
        vec![
            ("trajectory.csv", traj),
            ("obstacles.csv", obst),
            ("barrier.csv", barrier),
            ("ellipses.csv", ell),
            ("predictions.csv", pred),
            ("solver.csv", solver),
            ("metrics.csv", metrics),
        ]
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("t,perception_ms,tracking_ms,planning_ms,total_ms\n");
        for t in &self.timings {
            let _ = writeln!(
                out,
                "{},{:.3},{:.3},{:.3},{:.3}",
                t.t, t.perception_ms, t.tracking_ms, t.planning_ms, t.total_ms
            );
        }
        out
    }

    /// Writes `run.ndjson`, the CSV tables, `timing.csv` and any `grid.ndjson` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("run.ndjson"), self.to_ndjson().as_bytes())?;
        for (name, body) in self.csv_tables() {
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
        write_atomic(&dir.join("timing.csv"), self.timing_csv().as_bytes())?;
        if !self.grids.is_empty() {
            write_atomic(&dir.join("grid.ndjson"), self.grid_ndjson().as_bytes())?;
        }
        Ok(())
    }

    /// One line per captured grid: dense row-major elevation (null = no
    /// return) and obstacle mask.
    pub fn grid_ndjson(&self) -> String {
        let mut out = String::new();
        for g in &self.grids {
            out.push_str(&serde_json::to_string(g).expect("grid serializes"));
            out.push('\n');
        }
        out
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}
