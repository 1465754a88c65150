//! Scenario description: world, robot, sensor, scripted obstacles and the
//! parameter blocks of every pipeline stage, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::geometry::{Ellipse, Vec2};
use crate::localmap::{GridConfig, TraversabilityThresholds};
use crate::perception::{ClusterParams, MbeParams};
use crate::planner::{PlannerParams, ReferencePath, StateBounds};
use crate::tracking::TrackerParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl WorldBounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    pub fn state_bounds(&self) -> StateBounds {
        StateBounds {
            x_min: self.min[0],
            x_max: self.max[0],
            y_min: self.min[1],
            y_max: self.max[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub start: [f64; 2],
    #[serde(default)]
    pub heading: f64,
    pub goal: [f64; 2],
    /// Footprint radius (m).
    #[serde(default = "default_robot_radius")]
    pub radius: f64,
    /// Reference traversal speed (m/s).
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Distance to the goal that ends the episode (m).
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
}

fn default_robot_radius() -> f64 {
    0.3
}
fn default_speed() -> f64 {
    1.0
}
fn default_goal_tolerance() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub beams: usize,
    pub max_range: f64,
    pub noise_sigma: f64,
    /// Radii of the ground return rings (m), spaced by `ground_ring_step`.
    pub ground_ring_max: f64,
    pub ground_ring_step: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            beams: 360,
            max_range: 15.0,
            noise_sigma: 0.02,
            ground_ring_max: 7.0,
            ground_ring_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    Cylinder {
        radius: f64,
    },
    /// Rectangle with full side lengths `size`, rotated by `yaw`.
    Box {
        size: [f64; 2],
        #[serde(default)]
        yaw: f64,
    },
}

impl Shape {
    /// Ellipse used by the ground-truth barrier audit: the circle itself or
    /// the axis-aligned ellipse through the rectangle corners.
    pub fn audit_ellipse(&self, center: Vec2) -> Ellipse {
        match *self {
            Shape::Cylinder { radius } => Ellipse::new(center.x, center.y, radius, radius, 0.0),
            Shape::Box { size, yaw } => Ellipse::new(
                center.x,
                center.y,
                size[0] / std::f64::consts::SQRT_2,
                size[1] / std::f64::consts::SQRT_2,
                yaw,
            ),
        }
        .expect("validated shape")
    }

    /// Euclidean distance from `p` to the footprint (0 inside).
    pub fn distance(&self, center: Vec2, p: Vec2) -> f64 {
        match *self {
            Shape::Cylinder { radius } => (p.dist(center) - radius).max(0.0),
            Shape::Box { size, yaw } => {
                let q = (p - center).rotate(-yaw);
                let dx = (q.x.abs() - 0.5 * size[0]).max(0.0);
                let dy = (q.y.abs() - 0.5 * size[1]).max(0.0);
                dx.hypot(dy)
            }
        }
    }

    /// First intersection of the ray `origin + t·dir` (unit `dir`, `t > 0`).
    pub fn ray_hit(&self, center: Vec2, origin: Vec2, dir: Vec2) -> Option<f64> {
        match *self {
            Shape::Cylinder { radius } => {
                let o = origin - center;
                let b = o.dot(dir);
                let c = o.norm_sq() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|t| *t > 0.0)
            }
            Shape::Box { size, yaw } => {
                let o = (origin - center).rotate(-yaw);
                let d = dir.rotate(-yaw);
                let half = [0.5 * size[0], 0.5 * size[1]];
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for (oi, di, hi) in [(o.x, d.x, half[0]), (o.y, d.y, half[1])] {
                    if di.abs() < 1e-15 {
                        if oi.abs() > hi {
                            return None;
                        }
                    } else {
                        let a = (-hi - oi) / di;
                        let b = (hi - oi) / di;
                        t0 = t0.max(a.min(b));
                        t1 = t1.min(a.max(b));
                    }
                }
                if t0 > t1 || t1 <= 0.0 {
                    return None;
                }
                Some(if t0 > 0.0 { t0 } else { t1 })
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Shape::Cylinder { radius } if !(radius > 0.0) => {
                Err(format!("cylinder radius must be positive, got {radius}"))
            }
            Shape::Box { size, .. } if !(size[0] > 0.0 && size[1] > 0.0) => Err("box sides must be positive".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Motion {
    Static {
        position: [f64; 2],
    },
    /// Holds `start` until `delay` seconds, then moves at `velocity`.
    ConstantVelocity {
        start: [f64; 2],
        velocity: [f64; 2],
        #[serde(default)]
        delay: f64,
    },
    /// Piecewise-linear path at constant speed; stops at the last point
    /// unless `looped`.
    Waypoint {
        points: Vec<[f64; 2]>,
        speed: f64,
        #[serde(default)]
        looped: bool,
    },
    /// `center + amplitude · sin(2πt / period + phase)` per axis.
    Sinusoidal {
        center: [f64; 2],
        amplitude: [f64; 2],
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Motion {
    pub fn position(&self, t: f64) -> Vec2 {
        match self {
            Motion::Static { position } => Vec2::from(*position),
            Motion::ConstantVelocity { start, velocity, delay } => {
                Vec2::from(*start) + Vec2::from(*velocity).scale((t - delay).max(0.0))
            }
            Motion::Waypoint { points, speed, looped } => {
                let pts: Vec<Vec2> = points.iter().map(|p| Vec2::from(*p)).collect();
                if pts.len() == 1 {
                    return pts[0];
                }
                let mut segs: Vec<(Vec2, Vec2)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
                if *looped {
                    segs.push((pts[pts.len() - 1], pts[0]));
                }
                let total: f64 = segs.iter().map(|(a, b)| a.dist(*b)).sum();
                let mut s = speed * t.max(0.0);
                if total <= 0.0 {
                    return pts[0];
                }
                if *looped {
                    s %= total;
                } else if s >= total {
                    return pts[pts.len() - 1];
                }
                for (a, b) in &segs {
                    let len = a.dist(*b);
                    if s <= len && len > 0.0 {
                        return *a + (*b - *a).scale(s / len);
                    }
                    s -= len;
                }
                segs.last().expect("non-empty").1
            }
            Motion::Sinusoidal {
                center,
                amplitude,
                period,
                phase,
            } => {
                let w = (2.0 * std::f64::consts::PI * t / period + phase).sin();
                Vec2::new(center[0] + amplitude[0] * w, center[1] + amplitude[1] * w)
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Motion::ConstantVelocity { delay, .. } if *delay < 0.0 => Err("delay must be non-negative".into()),
            Motion::Waypoint { points, speed, .. } if points.is_empty() || !(*speed >= 0.0) => {
                Err("waypoint motion needs points and a non-negative speed".into())
            }
            Motion::Sinusoidal { period, .. } if !(*period > 0.0) => Err("sinusoid period must be positive".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub name: String,
    pub shape: Shape,
    /// Top height (m); returns are tagged with it.
    #[serde(default = "default_height")]
    pub height: f64,
    pub motion: Motion,
}

fn default_height() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub grid: GridConfig,
    pub thresholds: TraversabilityThresholds,
    pub cluster: ClusterParams,
    pub mbe: MbeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Episode timeout (s).
    pub duration: f64,
    pub world: WorldBounds,
    pub robot: RobotConfig,
    /// Reference polyline; a straight start→goal line when empty.
    #[serde(default)]
    pub reference: Vec<[f64; 2]>,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default)]
    pub perception: PerceptionConfig,
    #[serde(default)]
    pub tracker: TrackerParams,
    #[serde(default)]
    pub planner: PlannerParams,
}

/// Renders a TOML parse error as `line L, column C: message`.
fn describe_toml_error(src: &str, err: &toml::de::Error) -> String {
    match err.span() {
        Some(span) => {
            let before = &src[..span.start.min(src.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            format!("line {line}, column {col}: {}", err.message())
        }
        None => err.message().to_string(),
    }
}

impl Scenario {
    pub fn from_toml_str(src: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(src).map_err(|e| ScenarioError::Parse(describe_toml_error(src, &e)))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration > 0.0) {
            return bad("duration must be positive".into());
        }
        let w = &self.world;
        if !(w.min[0] < w.max[0] && w.min[1] < w.max[1]) {
            return bad("world bounds are empty".into());
        }
        for (what, p) in [("start", self.robot.start), ("goal", self.robot.goal)] {
            if !w.contains(Vec2::from(p)) {
                return bad(format!("robot {what} lies outside the world bounds"));
            }
        }
        if !(self.robot.radius > 0.0 && self.robot.speed > 0.0 && self.robot.goal_tolerance > 0.0) {
            return bad("robot radius, speed and goal tolerance must be positive".into());
        }
        if self.sensor.beams == 0 || !(self.sensor.max_range > 0.0) || !(self.sensor.noise_sigma >= 0.0) {
            return bad("sensor needs at least one beam, a positive range and non-negative noise".into());
        }
        for ob in &self.obstacles {
            ob.shape
                .validate()
                .map_err(|m| ScenarioError::Invalid(format!("obstacle `{}`: {m}", ob.name)))?;
            ob.motion
                .validate()
                .map_err(|m| ScenarioError::Invalid(format!("obstacle `{}`: {m}", ob.name)))?;
        }
        if !(self.tracker.dt - self.planner.dt).abs().le(&1e-12) {
            return bad("tracker.dt and planner.dt must agree".into());
        }
        self.perception
            .grid
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.tracker
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.planner
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn reference_path(&self) -> ReferencePath {
        let mut waypoints: Vec<Vec2> = self.reference.iter().map(|p| Vec2::from(*p)).collect();
        if waypoints.len() < 2 {
            waypoints = vec![Vec2::from(self.robot.start), Vec2::from(self.robot.goal)];
        }
        ReferencePath {
            waypoints,
            speed: self.robot.speed,
        }
    }

    /// Applies `key=value` overrides (dotted keys, TOML values; bare words
    /// are taken as strings). Keys must name existing fields.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ScenarioError> {
        let mut root = toml::Value::try_from(self).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ScenarioError::Parse(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let value = parse_override_value(raw.trim());
            let mut slot = &mut root;
            for part in key.split('.') {
                slot = match slot {
                    toml::Value::Table(t) => t.get_mut(part),
                    toml::Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| ScenarioError::UnknownOverride(key.to_string()))?;
            }
            *slot = match (&*slot, value) {
                // integer literals may set float fields
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
        }
        let text = toml::to_string(&root).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::from_toml_str(&text)
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Canonical benchmark: a 20 m straight run crossed by a pedestrian and a
/// faster mover from the other side, with a static box beside the path.
pub fn crossing() -> Scenario {
    Scenario::from_toml_str(CROSSING_TOML).expect("built-in scenario is valid")
}

pub const CROSSING_TOML: &str = include_str!("../scenarios/crossing.toml");
