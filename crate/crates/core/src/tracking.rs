//! Shape-aware Kalman tracking of obstacle ellipses and uncertainty-inflated
//! trajectory prediction.
//!
//! State layout is `[x, y, vx, vy, ax, ay, a, b, theta]`: a constant
//! acceleration model on the center and a constant shape. The measurement is
//! the ellipse `[cx, cy, a, b, theta]`. The position measurement variance is
//! adapted from how much the ellipse shape fluctuates over a short window.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix2, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::TrackingError;
use crate::geometry::{wrap_axis_angle, wrap_axis_residual, Ellipse, Vec2};
use crate::perception::{AssociationParams, LabelManager};

pub type StateVec = SVector<f64, 9>;
pub type StateCov = SMatrix<f64, 9, 9>;
type MeasVec = SVector<f64, 5>;
type MeasMat = SMatrix<f64, 5, 9>;

pub const IX: usize = 0;
pub const IY: usize = 1;
pub const IVX: usize = 2;
pub const IVY: usize = 3;
pub const IAX: usize = 4;
pub const IAY: usize = 5;
pub const IA: usize = 6;
pub const IB: usize = 7;
pub const ITHETA: usize = 8;

/// Smallest axis a predicted ellipse may shrink to.
const AXIS_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: StateVec,
    pub cov: StateCov,
}

impl TrackState {
    /// Fresh track at a measured ellipse: zero velocity and acceleration with
    /// broad priors.
    pub fn from_measurement(e: &Ellipse, params: &TrackerParams) -> Self {
        let mut mean = StateVec::zeros();
        mean[IX] = e.cx();
        mean[IY] = e.cy();
        mean[IA] = e.a();
        mean[IB] = e.b();
        mean[ITHETA] = e.theta();
        let mut cov = StateCov::zeros();
        let init = &params.initial_variance;
        for (i, v) in [
            init.position,
            init.position,
            init.velocity,
            init.velocity,
            init.acceleration,
            init.acceleration,
            params.r_shape,
            params.r_shape,
            params.r_shape,
        ]
        .into_iter()
        .enumerate()
        {
            cov[(i, i)] = v;
        }
        Self { mean, cov }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.mean[IX], self.mean[IY])
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.mean[IVX], self.mean[IVY])
    }

    pub fn ellipse(&self) -> Ellipse {
        Ellipse::new(
            self.mean[IX],
            self.mean[IY],
            self.mean[IA].max(AXIS_FLOOR),
            self.mean[IB].max(AXIS_FLOOR),
            self.mean[ITHETA],
        )
        .expect("track state is finite")
    }

    pub fn position_cov(&self) -> Matrix2<f64> {
        self.cov.fixed_view::<2, 2>(IX, IX).into_owned()
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_cov_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov).eigenvalues.min()
    }

    /// Keeps `a >= b` and `theta` in `[-π/2, π/2)`, permuting covariance rows
    /// and columns when the axes swap.
    fn canonicalize(&mut self) {
        if self.mean[IA] < self.mean[IB] {
            self.mean.swap_rows(IA, IB);
            self.cov.swap_rows(IA, IB);
            self.cov.swap_columns(IA, IB);
            self.mean[ITHETA] += std::f64::consts::FRAC_PI_2;
        }
        self.mean[ITHETA] = wrap_axis_angle(self.mean[ITHETA]);
        self.cov = 0.5 * (self.cov + self.cov.transpose());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialVariance {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl Default for InitialVariance {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 4.0,
            acceleration: 4.0,
        }
    }
}

/// Process noise: white jerk on each center axis plus random-walk shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoise {
    /// Jerk power spectral density (m²/s⁵).
    pub jerk_psd: f64,
    /// Per-step variance added to each semi-axis (m²).
    pub axis_var: f64,
    /// Per-step variance added to the orientation (rad²).
    pub angle_var: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            jerk_psd: 0.1,
            axis_var: 1e-4,
            angle_var: 1e-3,
        }
    }
}

impl ProcessNoise {
    pub fn matrix(&self, dt: f64) -> StateCov {
        let q = self.jerk_psd;
        let (t2, t3, t4, t5) = (dt.powi(2), dt.powi(3), dt.powi(4), dt.powi(5));
        let block = [
            [t5 / 20.0, t4 / 8.0, t3 / 6.0],
            [t4 / 8.0, t3 / 3.0, t2 / 2.0],
            [t3 / 6.0, t2 / 2.0, dt],
        ];
        let mut m = StateCov::zeros();
        for axis in 0..2 {
            for r in 0..3 {
                for c in 0..3 {
                    m[(axis + 2 * r, axis + 2 * c)] = q * block[r][c];
                }
            }
        }
        m[(IA, IA)] = self.axis_var;
        m[(IB, IB)] = self.axis_var;
        m[(ITHETA, ITHETA)] = self.angle_var;
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InflationMode {
    /// Smallest root of the Minkowski bounding equation.
    MinkowskiRoot,
    /// Grow both axes by the full uncertainty radius.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Filter period (s).
    pub dt: f64,
    pub process_noise: ProcessNoise,
    pub initial_variance: InitialVariance,
    /// Bounds of the adapted position measurement variance (m²).
    pub r_p_min: f64,
    pub r_p_max: f64,
    /// Shape measurement variance.
    pub r_shape: f64,
    /// Confidence values mapped to `r_p_min` and `r_p_max`.
    pub xi_min_crit: f64,
    pub xi_max_crit: f64,
    /// Scale coefficient of the confidence estimator.
    pub kappa: f64,
    /// Power coefficient of the confidence estimator.
    pub gamma_pow: f64,
    /// Shape history length.
    pub window: usize,
    /// Sigma multiple used for the uncertainty radii.
    pub sigma_bound: f64,
    pub inflation: InflationMode,
    pub association: AssociationParams,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            process_noise: ProcessNoise::default(),
            initial_variance: InitialVariance::default(),
            r_p_min: 0.0025,
            r_p_max: 0.25,
            r_shape: 0.05,
            xi_min_crit: 1e-3,
            xi_max_crit: 0.1,
            kappa: 5.5,
            gamma_pow: 1.3,
            window: 10,
            sigma_bound: 2.0,
            inflation: InflationMode::MinkowskiRoot,
            association: AssociationParams::default(),
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let bad = |m: &str| Err(TrackingError::InvalidParams(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.r_p_min > 0.0 && self.r_p_min <= self.r_p_max) {
            return bad("need 0 < r_p_min <= r_p_max");
        }
        if !(self.xi_min_crit > 0.0 && self.xi_min_crit < self.xi_max_crit) {
            return bad("need 0 < xi_min_crit < xi_max_crit");
        }
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if !(self.r_shape > 0.0) {
            return bad("r_shape must be positive");
        }
        Ok(())
    }
}

fn transition(dt: f64) -> StateCov {
    let mut a = StateCov::identity();
    let h = 0.5 * dt * dt;
    for axis in 0..2 {
        a[(axis, axis + 2)] = dt;
        a[(axis, axis + 4)] = h;
        a[(axis + 2, axis + 4)] = dt;
    }
    a
}

fn observation() -> MeasMat {
    let mut h = MeasMat::zeros();
    h[(0, IX)] = 1.0;
    h[(1, IY)] = 1.0;
    h[(2, IA)] = 1.0;
    h[(3, IB)] = 1.0;
    h[(4, ITHETA)] = 1.0;
    h
}

/// Propagates one filter period: constant-acceleration kinematics, shape held.
pub fn kf_predict(s: &TrackState, params: &TrackerParams) -> TrackState {
    let a = transition(params.dt);
    let cov = a * s.cov * a.transpose() + params.process_noise.matrix(params.dt);
    TrackState {
        mean: a * s.mean,
        cov: 0.5 * (cov + cov.transpose()),
    }
}

/// Linear update with an ellipse measurement; position variance `r_p`.
pub fn kf_update(
    s: &TrackState,
    meas: &Ellipse,
    r_p: f64,
    params: &TrackerParams,
) -> Result<TrackState, TrackingError> {
    if !(r_p > 0.0) {
        return Err(TrackingError::NonPositiveVariance(r_p));
    }
    let h = observation();
    let z = MeasVec::new(meas.cx(), meas.cy(), meas.a(), meas.b(), meas.theta());
    let mut y = z - h * s.mean;
    y[4] = wrap_axis_residual(y[4]);

    let r =
        SMatrix::<f64, 5, 5>::from_diagonal(&MeasVec::new(r_p, r_p, params.r_shape, params.r_shape, params.r_shape));
    let innov = h * s.cov * h.transpose() + r;
    let chol = innov.cholesky().ok_or(TrackingError::FilterDivergence)?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ
    let gain = chol.solve(&(h * s.cov)).transpose();
    let mean = s.mean + gain * y;
    let ikh = StateCov::identity() - gain * h;
    let cov = ikh * s.cov * ikh.transpose() + gain * r * gain.transpose();
    let mut out = TrackState {
        mean,
        cov: 0.5 * (cov + cov.transpose()),
    };
    out.canonicalize();
    Ok(out)
}

/// Shape-change indicator over a window and the derived position-confidence
/// estimate `kappa * xi_eta^gamma_pow`.
///
/// Orientations are unwrapped against the first entry before averaging so
/// that the π-periodicity of the axis angle does not register as change.
pub fn confidence(history: &[Ellipse], params: &TrackerParams) -> Result<(f64, f64), TrackingError> {
    let m = history.len();
    if m < 2 {
        return Err(TrackingError::InsufficientHistory(m));
    }
    // shapes are taken relative to the first entry; the spread is unchanged
    // and a constant window yields exactly zero
    let first = history[0];
    let shapes: Vec<[f64; 3]> = history
        .iter()
        .map(|e| {
            [
                e.a() - first.a(),
                e.b() - first.b(),
                wrap_axis_residual(e.theta() - first.theta()),
            ]
        })
        .collect();
    let mut mean = [0.0; 3];
    for s in &shapes {
        for k in 0..3 {
            mean[k] += s[k] / m as f64;
        }
    }
    let xi_eta = shapes
        .iter()
        .map(|s| (0..3).map(|k| (s[k] - mean[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (m - 1) as f64;
    Ok((xi_eta, params.kappa * xi_eta.powf(params.gamma_pow)))
}

/// Geometric interpolation of the position variance between its bounds,
/// driven by the log-ratio of the confidence value to its critical bounds.
pub fn adapt_position_variance(xi_p_hat: f64, params: &TrackerParams) -> f64 {
    let k = if xi_p_hat <= 0.0 {
        0.0
    } else {
        ((xi_p_hat / params.xi_min_crit).log2() / (params.xi_max_crit / params.xi_min_crit).log2()).clamp(0.0, 1.0)
    };
    params.r_p_max.powf(k) * params.r_p_min.powf(1.0 - k)
}

/// Residual of the Minkowski bounding equation at `sigma`.
pub fn inflation_residual(a: f64, b: f64, r: f64, sigma: f64) -> f64 {
    let s = sigma + r;
    let ab = a + b;
    2.0 * s * s * (ab * s + 2.0 * a * b) / (ab * (ab + 2.0 * s)) - r * r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflation {
    pub sigma: f64,
    /// Set when the root solve failed and the conservative bound was used.
    pub fallback: bool,
}

/// Axis growth `sigma` bounding an ellipse swept by a disk of radius `r`.
pub fn inflate(a: f64, b: f64, r: f64, mode: InflationMode) -> Inflation {
    let conservative = Inflation {
        sigma: r,
        fallback: false,
    };
    if mode == InflationMode::Conservative {
        return conservative;
    }
    if r <= 0.0 {
        return Inflation {
            sigma: 0.0,
            fallback: false,
        };
    }
    let f0 = inflation_residual(a, b, r, 0.0);
    if f0.abs() <= 1e-15 * r * r || f0 > 0.0 {
        return Inflation {
            sigma: 0.0,
            fallback: false,
        };
    }
    let mut lo = 0.0;
    let mut hi = a + b + 2.0 * r;
    if !(inflation_residual(a, b, r, hi) > 0.0) || !f0.is_finite() {
        return Inflation {
            sigma: r,
            fallback: true,
        };
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inflation_residual(a, b, r, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = if inflation_residual(a, b, r, lo).abs() <= inflation_residual(a, b, r, hi).abs() {
        lo
    } else {
        hi
    };
    Inflation { sigma, fallback: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedStep {
    /// Inflated ellipse.
    pub ellipse: Ellipse,
    /// Estimated (un-inflated) ellipse.
    pub nominal: Ellipse,
    /// Uncertainty radius.
    pub r: f64,
    pub sigma: f64,
}

/// Future ellipses of one obstacle; `steps[k]` is `k` periods ahead, so
/// `steps[0]` is the current estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedObstacle {
    pub label: u64,
    pub steps: Vec<PredictedStep>,
}

impl PredictedObstacle {
    /// Ellipse at step `k`, clamped to the last available prediction.
    pub fn at(&self, k: usize) -> &Ellipse {
        &self.steps[k.min(self.steps.len() - 1)].ellipse
    }

    /// An obstacle held at one pose over `horizon + 1` steps.
    pub fn frozen(label: u64, e: Ellipse, horizon: usize) -> Self {
        let step = PredictedStep {
            ellipse: e,
            nominal: e,
            r: 0.0,
            sigma: 0.0,
        };
        Self {
            label,
            steps: vec![step; horizon + 1],
        }
    }
}

fn uncertainty_radius(s: &TrackState, c: f64) -> f64 {
    let pos = SymmetricEigen::new(s.position_cov()).eigenvalues.max().max(0.0);
    let shape = s.cov[(IA, IA)].max(s.cov[(IB, IB)]).max(0.0);
    c * pos.sqrt() + c * shape.sqrt()
}

/// Rolls the filter forward `horizon` periods and inflates each predicted
/// ellipse by its uncertainty. The radius is kept non-decreasing along the
/// horizon.
pub fn predict_trajectory(s: &TrackState, params: &TrackerParams, horizon: usize, label: u64) -> PredictedObstacle {
    let mut steps = Vec::with_capacity(horizon + 1);
    let mut state = s.clone();
    let mut r_prev: f64 = 0.0;
    for k in 0..=horizon {
        if k > 0 {
            state = kf_predict(&state, params);
        }
        let r = uncertainty_radius(&state, params.sigma_bound).max(r_prev);
        r_prev = r;
        let nominal = state.ellipse();
        let inf = inflate(nominal.a(), nominal.b(), r, params.inflation);
        steps.push(PredictedStep {
            ellipse: nominal.grown(inf.sigma),
            nominal,
            r,
            sigma: inf.sigma,
        });
    }
    PredictedObstacle { label, steps }
}

/// Per-label filter with its measurement history.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub label: u64,
    pub state: TrackState,
    /// Most recent measurements, oldest first, bounded by the window length.
    pub shapes: VecDeque<Ellipse>,
    /// Measured centers with their timestamps (for curve-fit predictors).
    pub centers: VecDeque<(f64, Vec2)>,
    pub last_measurement: Ellipse,
    pub last_update: f64,
    pub misses: u32,
    pub xi_eta: f64,
    pub xi_p_hat: f64,
    pub r_p: f64,
}

/// Associates frames of ellipses and runs one filter per label.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    labels: LabelManager,
    tracks: BTreeMap<u64, Track>,
    center_window: usize,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self, TrackingError> {
        params.validate()?;
        Ok(Self {
            labels: LabelManager::new(params.association),
            params,
            tracks: BTreeMap::new(),
            center_window: 10,
        })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Sets how many raw centers are retained per track.
    pub fn with_center_window(mut self, n: usize) -> Self {
        self.center_window = n.max(1);
        self
    }

    /// Processes one frame taken at time `t`.
    pub fn update(&mut self, measurements: &[Ellipse], t: f64) -> Result<(), TrackingError> {
        let frame = self.labels.update(measurements, t);
        for label in &frame.retired {
            self.tracks.remove(label);
        }
        let seen: Vec<u64> = frame.current.iter().map(|l| l.label).collect();
        for track in self.tracks.values_mut() {
            if !seen.contains(&track.label) {
                track.state = kf_predict(&track.state, &self.params);
                track.misses += 1;
            }
        }
        for le in &frame.current {
            match self.tracks.get_mut(&le.label) {
                Some(track) => {
                    let steps =
                        (((t - track.last_update) / self.params.dt).round() as i64).max(1) - track.misses as i64;
                    for _ in 0..steps.max(1) {
                        track.state = kf_predict(&track.state, &self.params);
                    }
                    track.shapes.push_back(le.ellipse);
                    while track.shapes.len() > self.params.window {
                        track.shapes.pop_front();
                    }
                    let (xi_eta, xi_p_hat) = confidence(track.shapes.make_contiguous(), &self.params)?;
                    let r_p = adapt_position_variance(xi_p_hat, &self.params);
                    track.state = kf_update(&track.state, &le.ellipse, r_p, &self.params)?;
                    track.centers.push_back((t, le.ellipse.center()));
                    while track.centers.len() > self.center_window {
                        track.centers.pop_front();
                    }
                    track.last_measurement = le.ellipse;
                    track.last_update = t;
                    track.misses = 0;
                    track.xi_eta = xi_eta;
                    track.xi_p_hat = xi_p_hat;
                    track.r_p = r_p;
                }
                None => {
                    let state = TrackState::from_measurement(&le.ellipse, &self.params);
                    self.tracks.insert(
                        le.label,
                        Track {
                            label: le.label,
                            state,
                            shapes: VecDeque::from([le.ellipse]),
                            centers: VecDeque::from([(t, le.ellipse.center())]),
                            last_measurement: le.ellipse,
                            last_update: t,
                            misses: 0,
                            xi_eta: 0.0,
                            xi_p_hat: 0.0,
                            r_p: self.params.r_p_max,
                        },
                    );
                }
            }
        }
        Ok(())
    }

    /// Live tracks ordered by label.
    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    pub fn track(&self, label: u64) -> Option<&Track> {
        self.tracks.get(&label)
    }

    pub fn predictions(&self, horizon: usize) -> Vec<PredictedObstacle> {
        self.tracks
            .values()
            .map(|t| predict_trajectory(&t.state, &self.params, horizon, t.label))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn state(pos: (f64, f64), vel: (f64, f64), acc: (f64, f64), shape: (f64, f64, f64)) -> TrackState {
        let mut mean = StateVec::zeros();
        mean[IX] = pos.0;
        mean[IY] = pos.1;
        mean[IVX] = vel.0;
        mean[IVY] = vel.1;
        mean[IAX] = acc.0;
        mean[IAY] = acc.1;
        mean[IA] = shape.0;
        mean[IB] = shape.1;
        mean[ITHETA] = shape.2;
        TrackState {
            mean,
            cov: StateCov::zeros(),
        }
    }

    fn params_dt(dt: f64) -> TrackerParams {
        TrackerParams {
            dt,
            ..Default::default()
        }
    }

    #[test]
    fn predict_examples() {
        let s = kf_predict(
            &state((0.0, 0.0), (1.0, 0.0), (0.0, 0.0), (1.0, 0.5, 0.3)),
            &params_dt(0.1),
        );
        assert_abs_diff_eq!(s.mean[IX], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean[IY], 0.0, epsilon = 1e-15);

        let s = kf_predict(
            &state((0.0, 0.0), (0.0, 0.0), (2.0, 0.0), (1.0, 0.5, 0.3)),
            &params_dt(0.5),
        );
        assert_abs_diff_eq!(s.mean[IX], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean[IVX], 1.0, epsilon = 1e-15);
        assert_eq!((s.mean[IA], s.mean[IB], s.mean[ITHETA]), (1.0, 0.5, 0.3));
    }

    #[test]
    fn update_with_zero_prior_covariance_keeps_state() {
        let s = state((1.0, 2.0), (0.3, 0.0), (0.0, 0.0), (1.0, 0.5, 0.3));
        let meas = Ellipse::new(1.0, 2.0, 1.0, 0.5, 0.3).unwrap();
        let out = kf_update(&s, &meas, 0.1, &TrackerParams::default()).unwrap();
        assert!((out.mean - s.mean).amax() < 1e-15);
    }

    #[test]
    fn update_equal_weights_gives_midpoint() {
        let mut s = state((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 0.5, 0.0));
        s.cov[(IX, IX)] = 1.0;
        s.cov[(IY, IY)] = 1.0;
        let meas = Ellipse::new(2.0, -4.0, 1.0, 0.5, 0.0).unwrap();
        let out = kf_update(&s, &meas, 1.0, &TrackerParams::default()).unwrap();
        assert_abs_diff_eq!(out.mean[IX], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.mean[IY], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cov[(IX, IX)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let s = state((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 0.5, 0.0));
        let meas = Ellipse::new(0.0, 0.0, 1.0, 0.5, 0.0).unwrap();
        assert_eq!(
            kf_update(&s, &meas, 0.0, &TrackerParams::default()),
            Err(TrackingError::NonPositiveVariance(0.0))
        );
        let mut broken = s.clone();
        broken.cov[(IX, IX)] = -10.0;
        assert_eq!(
            kf_update(&broken, &meas, 0.1, &TrackerParams::default()),
            Err(TrackingError::FilterDivergence)
        );
    }

    #[test]
    fn angle_residual_wraps_across_half_turn() {
        let mut s = state((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 0.5, 1.5));
        s.cov[(ITHETA, ITHETA)] = 1.0;
        // measurement at -1.5 is 0.14 rad away modulo π, not -3.0
        let meas = Ellipse::new(0.0, 0.0, 1.0, 0.5, -1.5).unwrap();
        let out = kf_update(&s, &meas, 0.1, &TrackerParams::default()).unwrap();
        let moved = wrap_axis_residual(out.mean[ITHETA] - 1.5);
        assert!(moved > 0.0 && moved < 0.1416, "moved {moved}");
    }

    fn run_constant_accel(steps: usize) -> (f64, f64) {
        let params = TrackerParams::default();
        let (p0, v0, a0) = (Vec2::new(-3.0, 1.0), Vec2::new(1.2, -0.4), Vec2::new(0.3, 0.2));
        let truth = |t: f64| p0 + v0.scale(t) + a0.scale(0.5 * t * t);
        let e0 = Ellipse::new(p0.x, p0.y, 0.6, 0.4, 0.2).unwrap();
        let mut s = TrackState::from_measurement(&e0, &params);
        let mut worst_eig: f64 = 0.0;
        for k in 1..=steps {
            s = kf_predict(&s, &params);
            let p = truth(k as f64 * params.dt);
            let meas = Ellipse::new(p.x, p.y, 0.6, 0.4, 0.2).unwrap();
            s = kf_update(&s, &meas, 1e-4, &params).unwrap();
            worst_eig = worst_eig.min(s.min_cov_eigenvalue());
            let sym = (s.cov - s.cov.transpose()).amax();
            assert!(sym < 1e-9);
        }
        let p = truth(steps as f64 * params.dt);
        ((s.position() - p).norm(), worst_eig)
    }

    #[test]
    fn noiseless_constant_acceleration_converges() {
        let (err, min_eig) = run_constant_accel(30);
        assert!(err < 1e-6, "position error {err}");
        assert!(min_eig >= -1e-9);
    }

    #[test]
    fn confidence_examples() {
        let p = TrackerParams::default();
        let e = |t: f64| Ellipse::new(0.0, 0.0, 1.0, 1.0 - 1e-12, t).unwrap();
        let same = [e(0.2), e(0.2), e(0.2)];
        assert_eq!(confidence(&same, &p).unwrap(), (0.0, 0.0));

        let hist = [e(0.0), e(0.0), e(0.3)];
        let (xi_eta, xi_hat) = confidence(&hist, &p).unwrap();
        // deviations from mean theta 0.1: 0.01 + 0.01 + 0.04, over m - 1 = 2
        assert_abs_diff_eq!(xi_eta, 0.03, epsilon = 1e-9);
        assert_abs_diff_eq!(xi_hat, 5.5 * 0.03f64.powf(1.3), epsilon = 1e-9);

        assert_eq!(confidence(&hist[..1], &p), Err(TrackingError::InsufficientHistory(1)));
    }

    #[test]
    fn estimator_coefficients() {
        let p = TrackerParams::default();
        assert_eq!((p.kappa, p.gamma_pow), (5.5, 1.3));
        // xi_eta = 1 → kappa
        assert_eq!(p.kappa * 1f64.powf(p.gamma_pow), 5.5);
    }

    #[test]
    fn position_variance_identities() {
        let p = TrackerParams {
            r_p_min: 0.25,
            r_p_max: 4.0,
            xi_min_crit: 0.25,
            xi_max_crit: 16.0,
            ..Default::default()
        };
        assert_eq!(adapt_position_variance(p.xi_min_crit, &p), p.r_p_min);
        assert_eq!(adapt_position_variance(p.xi_max_crit, &p), p.r_p_max);
        let mid = (p.xi_min_crit * p.xi_max_crit).sqrt();
        assert_eq!(adapt_position_variance(mid, &p), (p.r_p_min * p.r_p_max).sqrt());
        assert_eq!(adapt_position_variance(0.0, &p), p.r_p_min);
        assert_eq!(adapt_position_variance(-1.0, &p), p.r_p_min);
        assert_eq!(adapt_position_variance(1e6, &p), p.r_p_max);

        let d = TrackerParams::default();
        let mid = (d.xi_min_crit * d.xi_max_crit).sqrt();
        assert_abs_diff_eq!(
            adapt_position_variance(mid, &d),
            (d.r_p_min * d.r_p_max).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn inflation_examples() {
        assert_eq!(inflate(2.0, 1.0, 0.0, InflationMode::MinkowskiRoot).sigma, 0.0);
        for r in [0.1, 0.5, 2.0] {
            assert_eq!(inflate(0.7, 0.7, r, InflationMode::MinkowskiRoot).sigma, 0.0);
            assert_eq!(inflate(0.7, 0.7, r, InflationMode::Conservative).sigma, r);
        }
        let inf = inflate(2.0, 1.0, 0.5, InflationMode::MinkowskiRoot);
        assert!(!inf.fallback);
        assert!(inflation_residual(2.0, 1.0, 0.5, inf.sigma).abs() < 1e-9);
        assert_abs_diff_eq!(inf.sigma, 0.022, epsilon = 5e-4);

        // dense residual scan: first sign change brackets the returned root
        let n = 200_000;
        let hi = 2.0 + 1.0 + 1.0;
        let mut prev = inflation_residual(2.0, 1.0, 0.5, 0.0);
        let mut bracket = None;
        for i in 1..=n {
            let s = hi * i as f64 / n as f64;
            let f = inflation_residual(2.0, 1.0, 0.5, s);
            if prev < 0.0 && f >= 0.0 {
                bracket = Some((hi * (i - 1) as f64 / n as f64, s));
                break;
            }
            prev = f;
        }
        let (lo, up) = bracket.unwrap();
        assert!(inf.sigma >= lo - 1e-12 && inf.sigma <= up + 1e-12);
    }

    #[test]
    fn prediction_examples() {
        let params = TrackerParams {
            process_noise: ProcessNoise {
                jerk_psd: 0.0,
                axis_var: 0.0,
                angle_var: 0.0,
            },
            ..Default::default()
        };
        let s = state((0.0, 0.0), (1.0, 0.0), (0.0, 0.0), (0.5, 0.3, 0.0));
        let p = predict_trajectory(&s, &params, 5, 3);
        assert_eq!(p.steps.len(), 6);
        for k in 1..=5 {
            assert_abs_diff_eq!(p.steps[k].nominal.cx(), 0.1 * k as f64, epsilon = 1e-12);
        }

        let mut still = state((1.0, 1.0), (0.0, 0.0), (0.0, 0.0), (0.5, 0.3, 0.0));
        still.cov[(IX, IX)] = 0.01;
        still.cov[(IY, IY)] = 0.01;
        let p = predict_trajectory(&still, &params, 4, 0);
        for step in &p.steps {
            assert_eq!(step.ellipse, p.steps[0].ellipse);
        }

        let noisy = TrackerParams::default();
        let p = predict_trajectory(&still, &noisy, 10, 0);
        for w in p.steps.windows(2) {
            assert!(w[1].r > w[0].r, "{} !> {}", w[1].r, w[0].r);
        }
        assert_eq!(p.at(100), p.at(10));
    }

    #[test]
    fn tracker_follows_moving_ellipse() {
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        for k in 0..40 {
            let t = k as f64 * 0.1;
            let e = Ellipse::new(-2.0 + 1.2 * t, 0.5, 0.4, 0.3, 0.1).unwrap();
            tr.update(&[e], t).unwrap();
        }
        let tracks: Vec<&Track> = tr.tracks().collect();
        assert_eq!(tracks.len(), 1);
        assert_abs_diff_eq!(tracks[0].state.velocity().x, 1.2, epsilon = 1e-3);
        assert_eq!(tracks[0].shapes.len(), 10);
        let pred = tr.predictions(25);
        assert_eq!(pred[0].steps.len(), 26);
        assert_abs_diff_eq!(pred[0].steps[25].nominal.cx(), -2.0 + 1.2 * 6.4, epsilon = 1e-2);
    }

    #[test]
    fn tracker_coasts_and_retires() {
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        let e = Ellipse::new(0.0, 0.0, 0.4, 0.3, 0.0).unwrap();
        tr.update(&[e], 0.0).unwrap();
        tr.update(&[], 0.1).unwrap();
        assert_eq!(tr.tracks().count(), 1);
        assert_eq!(tr.tracks().next().unwrap().misses, 1);
        tr.update(&[], 0.2).unwrap();
        tr.update(&[], 0.3).unwrap();
        assert_eq!(tr.tracks().count(), 0);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = TrackerParams {
            window: 1,
            ..Default::default()
        };
        assert!(Tracker::new(p).is_err());
        let p = TrackerParams {
            r_p_min: 1.0,
            r_p_max: 0.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn position_variance_monotone(x in 0.0..1.0f64, y in 0.0..1.0f64) {
            let p = TrackerParams::default();
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(adapt_position_variance(lo, &p) <= adapt_position_variance(hi, &p));
        }

        #[test]
        fn inflated_contains_nominal(a in 0.05..3.0f64, ratio in 0.05..1.0f64, r in 0.0..2.0f64, theta in -1.5..1.5f64) {
            let b = a * ratio;
            let inf = inflate(a, b, r, InflationMode::MinkowskiRoot);
            prop_assert!(inf.sigma >= 0.0);
            if r > 0.0 && !inf.fallback {
                prop_assert!(inflation_residual(a, b, r, inf.sigma).abs() < 1e-9);
            }
            let e = Ellipse::new(1.0, -2.0, a, b, theta).unwrap();
            let grown = e.grown(inf.sigma);
            for p in e.polygon(64) {
                prop_assert!(crate::geometry::point_in_ellipse(&grown, p));
            }
        }

        #[test]
        fn covariance_stays_psd(meas in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.2..1.5f64, 0.2..1.5f64, -1.5..1.5f64, 1e-4..1.0f64), 1..40)) {
            let params = TrackerParams::default();
            let first = Ellipse::new(meas[0].0, meas[0].1, meas[0].2, meas[0].3, meas[0].4).unwrap();
            let mut s = TrackState::from_measurement(&first, &params);
            for (x, y, a, b, t, rp) in meas {
                s = kf_predict(&s, &params);
                let e = Ellipse::new(x, y, a, b, t).unwrap();
                s = kf_update(&s, &e, rp, &params).unwrap();
                prop_assert!((s.cov - s.cov.transpose()).amax() < 1e-9);
                prop_assert!(s.min_cov_eigenvalue() >= -1e-9);
                prop_assert!(s.mean[IA] >= s.mean[IB]);
            }
        }
    }
}
