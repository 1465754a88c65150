//! Shared geometric primitives: points, ellipses, robot poses and controls.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Tolerance applied on the boundary of the implicit ellipse inequality.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(r: f64, angle: f64) -> Self {
        Self::new(r * angle.cos(), r * angle.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates the vector counter-clockwise by `angle`.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Wraps an axis orientation into `[-π/2, π/2)`; orientations are equal modulo π.
pub fn wrap_axis_angle(a: f64) -> f64 {
    (a + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2
}

/// Wraps an orientation difference into `(-π/2, π/2]`.
pub fn wrap_axis_residual(a: f64) -> f64 {
    let w = wrap_axis_angle(a);
    if w == -FRAC_PI_2 {
        FRAC_PI_2
    } else {
        w
    }
}

/// Obstacle parameterization `[cx, cy, a, b, theta]`.
///
/// Always canonical: `a >= b > 0` and `theta` in `[-π/2, π/2)`. Construction
/// swaps the axes (rotating `theta` by π/2) when given `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEllipse", into = "RawEllipse")]
pub struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawEllipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl TryFrom<RawEllipse> for Ellipse {
    type Error = GeometryError;
    fn try_from(r: RawEllipse) -> Result<Self, Self::Error> {
        Ellipse::new(r.cx, r.cy, r.a, r.b, r.theta)
    }
}

impl From<Ellipse> for RawEllipse {
    fn from(e: Ellipse) -> Self {
        RawEllipse {
            cx: e.cx,
            cy: e.cy,
            a: e.a,
            b: e.b,
            theta: e.theta,
        }
    }
}

impl Ellipse {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Result<Self, GeometryError> {
        if !(cx.is_finite() && cy.is_finite() && a.is_finite() && b.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(GeometryError::NonPositiveAxis { a, b });
        }
        let (a, b, theta) = if a < b {
            (b, a, theta + FRAC_PI_2)
        } else {
            (a, b, theta)
        };
        Ok(Self {
            cx,
            cy,
            a,
            b,
            theta: wrap_axis_angle(theta),
        })
    }

    pub fn circle(center: Vec2, radius: f64) -> Result<Self, GeometryError> {
        Self::new(center.x, center.y, radius, radius, 0.0)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.cx, self.cy)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// Semi-major axis.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Semi-minor axis.
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    /// Shape vector `[a, b, theta]`.
    pub fn shape(&self) -> [f64; 3] {
        [self.a, self.b, self.theta]
    }

    pub fn translated(&self, d: Vec2) -> Ellipse {
        Ellipse {
            cx: self.cx + d.x,
            cy: self.cy + d.y,
            ..*self
        }
    }

    /// Grows both semi-axes by `sigma`.
    pub fn grown(&self, sigma: f64) -> Ellipse {
        Ellipse {
            a: self.a + sigma,
            b: self.b + sigma,
            ..*self
        }
    }

    /// Expresses `p` in the ellipse frame (major axis along +x).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center()).rotate(-self.theta)
    }

    /// Value of the implicit form `(x/a)^2 + (y/b)^2`; 1 on the boundary.
    pub fn implicit(&self, p: Vec2) -> f64 {
        let q = self.to_local(p);
        (q.x / self.a).powi(2) + (q.y / self.b).powi(2)
    }

    /// Boundary point at eccentric angle `t`.
    pub fn boundary_point(&self, t: f64) -> Vec2 {
        Vec2::new(self.a * t.cos(), self.b * t.sin()).rotate(self.theta) + self.center()
    }

    /// `n` evenly spaced boundary samples.
    pub fn polygon(&self, n: usize) -> Vec<Vec2> {
        (0..n)
            .map(|i| self.boundary_point(2.0 * PI * i as f64 / n as f64))
            .collect()
    }
}

/// Distance from the ellipse center to its periphery along the center→`p` ray.
///
/// Uses `ab / sqrt(b² cos²δ + a² sin²δ)`, which is the tangent form
/// `sqrt(a²b²(1 + tan²δ) / (b² + a² tan²δ))` without the singularity at
/// `δ = ±π/2`; δ is the angle between the ray and the major axis.
pub fn ray_ellipse_distance(e: &Ellipse, p: Vec2) -> Result<f64, GeometryError> {
    let d = p - e.center();
    if d.norm_sq() == 0.0 {
        return Err(GeometryError::DegenerateRay);
    }
    let delta = d.angle() - e.theta();
    Ok(ray_length_at(e.a(), e.b(), delta))
}

pub(crate) fn ray_length_at(a: f64, b: f64, delta: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    a * b / ((b * c).powi(2) + (a * s).powi(2)).sqrt()
}

/// Derivative of the ray length with respect to δ.
pub(crate) fn ray_length_ddelta(a: f64, b: f64, delta: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    let den = (b * c).powi(2) + (a * s).powi(2);
    -a * b * (a * a - b * b) * s * c / den.powf(1.5)
}

/// True iff `p` satisfies the rotated implicit inequality within [`BOUNDARY_TOL`].
pub fn point_in_ellipse(e: &Ellipse, p: Vec2) -> bool {
    e.implicit(p) <= 1.0 + BOUNDARY_TOL
}

/// Robot pose `[x, y, heading]`; heading is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Linear speed (m/s).
    pub v: f64,
    /// Angular rate (rad/s).
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { v: 0.0, omega: 0.0 };

    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// Time-stamped sequence of poses with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2Trajectory {
    samples: Vec<(f64, RobotState)>,
}

impl Pose2Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, state: RobotState) -> Result<(), GeometryError> {
        if let Some(&(last, _)) = self.samples.last() {
            if t <= last {
                return Err(GeometryError::NonMonotoneTime { last, next: t });
            }
        }
        self.samples.push((t, state));
        Ok(())
    }

    pub fn samples(&self) -> &[(f64, RobotState)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
