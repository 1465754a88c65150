//! Perception-to-control pipeline for navigating among static and moving
//! obstacles with a planar LiDAR.
//!
//! Obstacles are detected on a robot-centered elevation grid
//! ([`localmap`]), clustered and enclosed in minimum bounding ellipses
//! ([`perception`]), tracked with a shape-aware Kalman filter whose
//! position noise adapts to shape instability ([`tracking`]), and avoided by
//! a receding-horizon controller constrained with discrete-time dynamic
//! control barrier functions ([`planner`]). [`sim`] closes the loop in a
//! deterministic 2D world and scores runs.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod localmap;
pub mod perception;
pub mod planner;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod tracking;

pub use error::{GeometryError, LocalMapError, PlannerError, ScenarioError, SimError, TrackingError};
pub use geometry::{
    point_in_ellipse, ray_ellipse_distance, ControlInput, Ellipse, Point3, Pose2Trajectory, RobotState, Vec2,
};
