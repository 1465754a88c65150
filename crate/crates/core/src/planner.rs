//! Receding-horizon control of a differential-drive robot with discrete-time
//! barrier constraints against predicted obstacle ellipses.
//!
//! The optimal control problem is solved by sequential quadratic programming
//! over the control sequence only: states are obtained by rolling the
//! dynamics forward, so they always satisfy the model exactly. Each iteration
//! linearizes the rollout and the barrier rows, solves an elastic QP inside a
//! trust region, and accepts the step on an exact-penalty merit function.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, PlannerError};
use crate::geometry::{ray_length_at, ray_length_ddelta, wrap_angle, ControlInput, Ellipse, RobotState, Vec2};
use crate::qp::{self, QpProblem, QpSettings, QpStatus};
use crate::tracking::PredictedObstacle;

/// Diagonal weights on `[x, y, heading]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateWeights {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Diagonal weights on `[v, omega]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputWeights {
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Horizon length N.
    pub horizon: usize,
    pub dt: f64,
    /// Barrier decay rate.
    pub gamma_cbf: f64,
    pub d_safe: f64,
    /// Terminal state weight.
    pub weight_p: StateWeights,
    /// Stage state weight.
    pub weight_q: StateWeights,
    /// Input magnitude weight.
    pub weight_r: InputWeights,
    /// Input rate weight.
    pub weight_s: InputWeights,
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Admissible position region; unbounded when absent.
    pub state_bounds: Option<StateBounds>,
    /// Radius of the terminal ball around the last reference state.
    pub terminal_radius: f64,
    /// Linear penalty on barrier and state-bound slacks.
    pub slack_penalty: f64,
    /// Linear penalty on terminal-ball slack.
    pub terminal_penalty: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Initial trust-region half-width on each control.
    pub trust_radius: f64,
    /// Margin subtracted from linearized barrier rows so that steps which
    /// satisfy the linear model also satisfy the nonlinear rows.
    pub backoff: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: 25,
            dt: 0.1,
            gamma_cbf: 0.15,
            d_safe: 1.3,
            weight_p: StateWeights {
                x: 5.0,
                y: 5.0,
                heading: 0.2,
            },
            weight_q: StateWeights {
                x: 1.0,
                y: 1.0,
                heading: 0.05,
            },
            weight_r: InputWeights { v: 0.01, omega: 0.02 },
            weight_s: InputWeights { v: 2.0, omega: 0.5 },
            v_min: 0.0,
            v_max: 1.5,
            omega_max: 1.5,
            state_bounds: None,
            terminal_radius: 2.0,
            slack_penalty: 1e4,
            terminal_penalty: 50.0,
            max_iterations: 30,
            tolerance: 1e-6,
            trust_radius: 1.0,
            backoff: 0.01,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidParams(m.to_string()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.gamma_cbf > 0.0 && self.gamma_cbf <= 1.0) {
            return bad("gamma_cbf must lie in (0, 1]");
        }
        if !(self.v_min <= self.v_max) || !(self.omega_max >= 0.0) {
            return bad("empty input bounds");
        }
        let weights = [
            self.weight_p.x,
            self.weight_p.y,
            self.weight_p.heading,
            self.weight_q.x,
            self.weight_q.y,
            self.weight_q.heading,
            self.weight_r.v,
            self.weight_r.omega,
            self.weight_s.v,
            self.weight_s.omega,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("weights must be non-negative");
        }
        if self.max_iterations == 0 || !(self.trust_radius > 0.0) {
            return bad("max_iterations and trust_radius must be positive");
        }
        if !(self.backoff >= 0.0) {
            return bad("backoff must be non-negative");
        }
        Ok(())
    }

    pub fn clamp_input(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.v.clamp(self.v_min, self.v_max),
            u.omega.clamp(-self.omega_max, self.omega_max),
        )
    }

    /// Slowest admissible straight-ahead command.
    pub fn braking_input(&self) -> ControlInput {
        ControlInput::new(0.0f64.clamp(self.v_min, self.v_max), 0.0)
    }
}

/// Euler step of the unicycle model.
pub fn dynamics_step(x: &RobotState, u: ControlInput, dt: f64) -> RobotState {
    let (s, c) = x.heading.sin_cos();
    RobotState::new(x.x + u.v * c * dt, x.y + u.v * s * dt, x.heading + u.omega * dt)
}

/// States `x_0..x_N` obtained by applying `controls` from `x0`.
pub fn rollout(x0: &RobotState, controls: &[ControlInput], dt: f64) -> Vec<RobotState> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for u in controls {
        let next = dynamics_step(states.last().expect("non-empty"), *u, dt);
        states.push(next);
    }
    states
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierEval {
    /// Barrier value (m).
    pub h: f64,
    /// Center-to-periphery ray length (m).
    pub l: f64,
}

/// Distance from the robot to the obstacle periphery along the center ray,
/// minus the safety margin.
pub fn barrier(x: &RobotState, ob: &Ellipse, d_safe: f64) -> Result<BarrierEval, GeometryError> {
    let l = crate::geometry::ray_ellipse_distance(ob, x.position())?;
    Ok(BarrierEval {
        h: x.position().dist(ob.center()) - l - d_safe,
        l,
    })
}

/// Barrier value and its gradient with respect to the robot position. A robot
/// exactly at the center is treated as lying on the major axis.
fn barrier_with_gradient(p: Vec2, ob: &Ellipse, d_safe: f64) -> (f64, Vec2) {
    let mut d = p - ob.center();
    if d.norm_sq() < 1e-24 {
        d = Vec2::from_polar(1e-12, ob.theta());
    }
    let rho = d.norm();
    let delta = d.angle() - ob.theta();
    let l = ray_length_at(ob.a(), ob.b(), delta);
    let dl = ray_length_ddelta(ob.a(), ob.b(), delta);
    let ddelta = Vec2::new(-d.y, d.x).scale(1.0 / (rho * rho));
    (rho - l - d_safe, d.scale(1.0 / rho) - ddelta.scale(dl))
}

/// Discrete barrier condition `h(X_{k+1}) − (1 − γ) h(X_k)`; satisfied when
/// non-negative.
pub fn cbf_residual(h_k: f64, h_k1: f64, gamma: f64) -> f64 {
    h_k1 - (1.0 - gamma) * h_k
}

/// Barrier condition between consecutive robot states against the obstacle
/// as predicted at each of those steps.
pub fn cbf_constraint(
    x_k: &RobotState,
    x_k1: &RobotState,
    ob_k: &Ellipse,
    ob_k1: &Ellipse,
    params: &PlannerParams,
) -> Result<f64, GeometryError> {
    let h_k = barrier(x_k, ob_k, params.d_safe)?.h;
    let h_k1 = barrier(x_k1, ob_k1, params.d_safe)?.h;
    Ok(cbf_residual(h_k, h_k1, params.gamma_cbf))
}

/// How obstacle rows are imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// `h(X_{k+1}) ≥ (1 − γ) h(X_k)` for every step.
    Decay,
    /// `h(X_k) ≥ 0` for every predicted step.
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    SlackRelaxed,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverTelemetry {
    pub iterations: usize,
    pub qp_iterations: usize,
    pub cost: f64,
    /// Most negative obstacle-row residual (0 when all hold).
    pub max_violation: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub controls: Vec<ControlInput>,
    pub states: Vec<RobotState>,
    /// `cbf_residuals[j][k]`: row residual for obstacle `j` at step `k`.
    pub cbf_residuals: Vec<Vec<f64>>,
    pub status: SolveStatus,
    pub telemetry: SolverTelemetry,
}

impl MpcSolution {
    pub fn first_control(&self) -> ControlInput {
        self.controls[0]
    }

    /// Smallest obstacle-row residual, `+∞` without obstacles.
    pub fn min_residual(&self) -> f64 {
        self.cbf_residuals
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Previous plan and applied input carried between control cycles.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WarmStart {
    pub controls: Vec<ControlInput>,
    /// Input applied during the last cycle (anchors the rate cost).
    pub previous: ControlInput,
}

impl WarmStart {
    pub fn cold(previous: ControlInput) -> Self {
        Self {
            controls: Vec::new(),
            previous,
        }
    }

    /// Shifts a solution by one step for the next cycle.
    pub fn from_solution(sol: &MpcSolution) -> Self {
        let mut controls: Vec<ControlInput> = sol.controls.iter().skip(1).copied().collect();
        controls.push(*sol.controls.last().expect("non-empty plan"));
        Self {
            controls,
            previous: sol.controls[0],
        }
    }
}

/// Rollout plus the Jacobian of every state with respect to the stacked
/// controls `[v_0, ω_0, …, v_{N−1}, ω_{N−1}]`.
struct Linearization {
    states: Vec<RobotState>,
    // jac[k] is 3 × 2N
    jac: Vec<DMatrix<f64>>,
}

fn linearize(x0: &RobotState, controls: &[ControlInput], dt: f64) -> Linearization {
    let n = controls.len();
    let states = rollout(x0, controls, dt);
    let mut jac = Vec::with_capacity(n + 1);
    jac.push(DMatrix::zeros(3, 2 * n));
    for k in 0..n {
        let (s, c) = states[k].heading.sin_cos();
        let v = controls[k].v;
        let prev = &jac[k];
        let mut next = prev.clone();
        // A_k = I + heading coupling
        for col in 0..2 * k {
            next[(0, col)] += -v * s * dt * prev[(2, col)];
            next[(1, col)] += v * c * dt * prev[(2, col)];
        }
        next[(0, 2 * k)] += c * dt;
        next[(1, 2 * k)] += s * dt;
        next[(2, 2 * k + 1)] += dt;
        jac.push(next);
    }
    Linearization { states, jac }
}

struct Problem<'a> {
    x0: RobotState,
    reference: &'a [RobotState],
    obstacles: &'a [PredictedObstacle],
    mode: ConstraintMode,
    previous: ControlInput,
    params: &'a PlannerParams,
}

/// Constraint rows `c(U) ≥ 0` with gradients; obstacle rows come first.
struct Rows {
    values: Vec<f64>,
    grads: Vec<Vec<f64>>,
    penalties: Vec<f64>,
    obstacle_rows: usize,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.params.horizon
    }

    /// Weighted residual vector whose squared norm is the cost; with its
    /// Jacobian when `lin` is given.
    fn residuals(
        &self,
        controls: &[ControlInput],
        lin: &Linearization,
        with_jac: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let n = self.n();
        let p = self.params;
        let rows = 3 * n + 4 * n;
        let mut r = DVector::zeros(rows);
        let mut j = if with_jac {
            Some(DMatrix::zeros(rows, 2 * n))
        } else {
            None
        };
        for k in 1..=n {
            let w = if k == n { p.weight_p } else { p.weight_q };
            let sw = [w.x.sqrt(), w.y.sqrt(), w.heading.sqrt()];
            let x = &lin.states[k];
            let d = &self.reference[k];
            let err = [x.x - d.x, x.y - d.y, wrap_angle(x.heading - d.heading)];
            for i in 0..3 {
                let row = 3 * (k - 1) + i;
                r[row] = sw[i] * err[i];
                if let Some(j) = j.as_mut() {
                    for col in 0..2 * k {
                        j[(row, col)] = sw[i] * lin.jac[k][(i, col)];
                    }
                }
            }
        }
        let base = 3 * n;
        let (rv, rw) = (p.weight_r.v.sqrt(), p.weight_r.omega.sqrt());
        let (sv, sw) = (p.weight_s.v.sqrt(), p.weight_s.omega.sqrt());
        for k in 0..n {
            let u = controls[k];
            let prev = if k == 0 { self.previous } else { controls[k - 1] };
            let row = base + 4 * k;
            r[row] = rv * u.v;
            r[row + 1] = rw * u.omega;
            r[row + 2] = sv * (u.v - prev.v);
            r[row + 3] = sw * (u.omega - prev.omega);
            if let Some(j) = j.as_mut() {
                j[(row, 2 * k)] = rv;
                j[(row + 1, 2 * k + 1)] = rw;
                j[(row + 2, 2 * k)] = sv;
                j[(row + 3, 2 * k + 1)] = sw;
                if k > 0 {
                    j[(row + 2, 2 * k - 2)] = -sv;
                    j[(row + 3, 2 * k - 1)] = -sw;
                }
            }
        }
        (r, j)
    }

    fn rows(&self, lin: &Linearization) -> Rows {
        let n = self.n();
        let p = self.params;
        let dim = 2 * n;
        let mut out = Rows {
            values: Vec::new(),
            grads: Vec::new(),
            penalties: Vec::new(),
            obstacle_rows: 0,
        };
        let pos_grad = |k: usize, g: Vec2| -> Vec<f64> {
            (0..dim)
                .map(|col| g.x * lin.jac[k][(0, col)] + g.y * lin.jac[k][(1, col)])
                .collect()
        };
        for ob in self.obstacles {
            let evals: Vec<(f64, Vec2)> = (0..=n)
                .map(|k| barrier_with_gradient(lin.states[k].position(), ob.at(k), p.d_safe))
                .collect();
            for k in 0..n {
                let (h1, g1) = evals[k + 1];
                let mut grad = pos_grad(k + 1, g1);
                let value = match self.mode {
                    ConstraintMode::Distance => h1,
                    ConstraintMode::Decay => {
                        let (h0, g0) = evals[k];
                        if k > 0 {
                            let g0 = pos_grad(k, g0);
                            for (a, b) in grad.iter_mut().zip(g0) {
                                *a -= (1.0 - p.gamma_cbf) * b;
                            }
                        }
                        cbf_residual(h0, h1, p.gamma_cbf)
                    }
                };
                out.values.push(value);
                out.grads.push(grad);
                out.penalties.push(p.slack_penalty);
            }
        }
        out.obstacle_rows = out.values.len();

        let goal = self.reference[n].position();
        let d = lin.states[n].position() - goal;
        let dist = d.norm();
        if dist > 1e-9 {
            let g = pos_grad(n, d.scale(-1.0 / dist));
            out.values.push(p.terminal_radius - dist);
            out.grads.push(g);
            out.penalties.push(p.terminal_penalty);
        }

        if let Some(b) = p.state_bounds {
            for k in 1..=n {
                let pos = lin.states[k].position();
                for (value, g) in [
                    (pos.x - b.x_min, Vec2::new(1.0, 0.0)),
                    (b.x_max - pos.x, Vec2::new(-1.0, 0.0)),
                    (pos.y - b.y_min, Vec2::new(0.0, 1.0)),
                    (b.y_max - pos.y, Vec2::new(0.0, -1.0)),
                ] {
                    // rows far from binding cannot activate inside the trust region
                    if value < 5.0 {
                        out.values.push(value);
                        out.grads.push(pos_grad(k, g));
                        out.penalties.push(p.slack_penalty);
                    }
                }
            }
        }
        out
    }

    fn merit(&self, controls: &[ControlInput]) -> (f64, f64, f64) {
        let lin = linearize(&self.x0, controls, self.params.dt);
        let (r, _) = self.residuals(controls, &lin, false);
        let rows = self.rows(&lin);
        let cost = r.norm_squared();
        let penalty: f64 = rows
            .values
            .iter()
            .zip(&rows.penalties)
            .map(|(v, w)| w * (-v).max(0.0))
            .sum();
        let worst = rows.values[..rows.obstacle_rows].iter().copied().fold(0.0, f64::min);
        (cost + penalty, cost, worst)
    }

    fn obstacle_residuals(&self, states: &[RobotState]) -> Vec<Vec<f64>> {
        let n = self.n();
        let p = self.params;
        self.obstacles
            .iter()
            .map(|ob| {
                let h: Vec<f64> = (0..=n)
                    .map(|k| barrier_with_gradient(states[k].position(), ob.at(k), p.d_safe).0)
                    .collect();
                (0..n)
                    .map(|k| match self.mode {
                        ConstraintMode::Distance => h[k + 1],
                        ConstraintMode::Decay => cbf_residual(h[k], h[k + 1], p.gamma_cbf),
                    })
                    .collect()
            })
            .collect()
    }
}

fn to_vector(controls: &[ControlInput]) -> DVector<f64> {
    DVector::from_iterator(2 * controls.len(), controls.iter().flat_map(|u| [u.v, u.omega]))
}

fn from_vector(v: &DVector<f64>) -> Vec<ControlInput> {
    v.as_slice().chunks(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}

/// Solves the receding-horizon problem from `x0`.
///
/// `reference` holds `N + 1` states (index 0 is ignored since the initial
/// state is fixed). Obstacle rows use `obstacles[j].at(k)` for step `k`.
pub fn solve(
    x0: &RobotState,
    reference: &[RobotState],
    obstacles: &[PredictedObstacle],
    mode: ConstraintMode,
    params: &PlannerParams,
    warm: &WarmStart,
) -> Result<MpcSolution, PlannerError> {
    params.validate()?;
    let n = params.horizon;
    if reference.len() != n + 1 {
        return Err(PlannerError::ReferenceLength {
            expected: n + 1,
            got: reference.len(),
        });
    }
    let problem = Problem {
        x0: *x0,
        reference,
        obstacles,
        mode,
        previous: warm.previous,
        params,
    };

    let mut controls: Vec<ControlInput> = (0..n)
        .map(|k| {
            let u = warm
                .controls
                .get(k)
                .or(warm.controls.last())
                .copied()
                .unwrap_or(warm.previous);
            params.clamp_input(u)
        })
        .collect();
    let lb = DVector::from_iterator(2 * n, (0..n).flat_map(|_| [params.v_min, -params.omega_max]));
    let ub = DVector::from_iterator(2 * n, (0..n).flat_map(|_| [params.v_max, params.omega_max]));
    let settings = QpSettings::default();

    let (mut merit, mut cost, mut worst) = problem.merit(&controls);
    let mut best: Option<(f64, Vec<ControlInput>)> = None;
    let feasible_tol = 1e-6;
    if worst >= -feasible_tol {
        best = Some((cost, controls.clone()));
    }
    let mut radius = params.trust_radius;
    let mut telemetry = SolverTelemetry::default();
    let mut qp_failed_first = false;

    for iter in 0..params.max_iterations {
        telemetry.iterations = iter + 1;
        let lin = linearize(x0, &controls, params.dt);
        let (r, j) = problem.residuals(&controls, &lin, true);
        let j = j.expect("jacobian requested");
        let rows = problem.rows(&lin);
        let m = rows.values.len();

        let mut h_mat = 2.0 * j.transpose() * &j;
        for i in 0..2 * n {
            h_mat[(i, i)] += 1e-8;
        }
        let g = 2.0 * j.transpose() * &r;
        let u = to_vector(&controls);
        let qp_lb = (&lb - &u).map(|v| v.max(-radius));
        let qp_ub = (&ub - &u).map(|v| v.min(radius));
        // linearized c + ∇c·d ≥ 0 in elastic form −∇c·d − s ≤ c
        let g_rows = DMatrix::from_fn(m, 2 * n, |i, col| -rows.grads[i][col]);
        let qp_problem = QpProblem {
            h_mat,
            g,
            lb: qp_lb.map(|v| v.min(0.0)),
            ub: qp_ub.map(|v| v.max(0.0)),
            rows: g_rows,
            rhs: DVector::from_iterator(
                m,
                rows.values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i < rows.obstacle_rows { v - params.backoff } else { *v }),
            ),
            penalty: DVector::from_vec(rows.penalties.clone()),
        };
        let sol = qp::solve(&qp_problem, &DVector::zeros(2 * n), &settings);
        telemetry.qp_iterations += sol.iterations;
        if sol.status == QpStatus::Numerical {
            if iter == 0 {
                qp_failed_first = true;
            }
            break;
        }

        // model merit at zero step uses the same penalty form as the QP
        let zero = DVector::zeros(2 * n);
        let model0 = qp_problem.objective(&zero, &qp_problem.min_slack(&zero));
        let predicted = model0 - sol.objective;
        let step_norm = sol.x.amax();
        if predicted <= 1e-10 * (1.0 + merit.abs()) || step_norm < params.tolerance {
            telemetry.converged = true;
            break;
        }
        let candidate = from_vector(&(u + &sol.x))
            .into_iter()
            .map(|c| params.clamp_input(c))
            .collect::<Vec<_>>();
        let (c_merit, c_cost, c_worst) = problem.merit(&candidate);
        let actual = merit - c_merit;
        let ratio = actual / predicted;
        if ratio > 1e-4 {
            controls = candidate;
            merit = c_merit;
            cost = c_cost;
            worst = c_worst;
            if worst >= -feasible_tol && best.as_ref().is_none_or(|(bc, _)| cost <= *bc) {
                best = Some((cost, controls.clone()));
            }
            if ratio > 0.75 && step_norm > 0.9 * radius {
                radius = (2.0 * radius).min(10.0);
            } else if ratio < 0.25 {
                radius *= 0.5;
            }
            if actual.abs() <= params.tolerance * (1.0 + merit.abs()) {
                telemetry.converged = true;
                break;
            }
        } else {
            radius = 0.25 * step_norm;
            if radius < 1e-9 {
                telemetry.converged = true;
                break;
            }
        }
    }

    let (status, controls) = if qp_failed_first {
        (SolveStatus::Infeasible, vec![params.braking_input(); n])
    } else if let Some((_, c)) = best {
        (SolveStatus::Optimal, c)
    } else {
        (SolveStatus::SlackRelaxed, controls)
    };
    let states = rollout(x0, &controls, params.dt);
    let cbf_residuals = problem.obstacle_residuals(&states);
    let lin = linearize(x0, &controls, params.dt);
    telemetry.cost = problem.residuals(&controls, &lin, false).0.norm_squared();
    telemetry.max_violation = cbf_residuals.iter().flatten().copied().fold(0.0, f64::min);
    Ok(MpcSolution {
        controls,
        states,
        cbf_residuals,
        status,
        telemetry,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "mpc-euclid")]
    Euclid,
    #[serde(rename = "mpc-cbf")]
    Cbf,
    #[serde(rename = "mpc-kf")]
    Kf,
    #[serde(rename = "mpc-cbf-curvefit")]
    CbfCurvefit,
    #[serde(rename = "mpc-dcbf")]
    Dcbf,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] = [
        PlannerKind::Euclid,
        PlannerKind::Cbf,
        PlannerKind::Kf,
        PlannerKind::CbfCurvefit,
        PlannerKind::Dcbf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Euclid => "mpc-euclid",
            PlannerKind::Cbf => "mpc-cbf",
            PlannerKind::Kf => "mpc-kf",
            PlannerKind::CbfCurvefit => "mpc-cbf-curvefit",
            PlannerKind::Dcbf => "mpc-dcbf",
        }
    }

    pub fn mode(self) -> ConstraintMode {
        match self {
            PlannerKind::Euclid | PlannerKind::Kf => ConstraintMode::Distance,
            PlannerKind::Cbf | PlannerKind::CbfCurvefit | PlannerKind::Dcbf => ConstraintMode::Decay,
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownPlanner(pub String);

impl fmt::Display for UnknownPlanner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = PlannerKind::ALL.iter().map(|k| k.name()).collect();
        write!(f, "unknown planner `{}` (valid: {})", self.0, names.join(", "))
    }
}

impl std::error::Error for UnknownPlanner {}

impl FromStr for PlannerKind {
    type Err = UnknownPlanner;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownPlanner(s.to_string()))
    }
}

/// What the perception stack knows about one obstacle at planning time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleView {
    pub label: u64,
    /// Most recent measured ellipse.
    pub measured: Ellipse,
    /// Recent measured centers `(time, center)`, oldest first.
    pub centers: Vec<(f64, Vec2)>,
    /// Filter prediction over the horizon, inflated by its uncertainty.
    pub prediction: PredictedObstacle,
}

/// Least-squares polynomial fit of the center history, evaluated at
/// `now + k·dt` for `k = 0..=horizon`; the shape is held at the last
/// measurement.
pub fn curvefit_prediction(view: &ObstacleView, now: f64, horizon: usize, dt: f64, degree: usize) -> PredictedObstacle {
    let pts = &view.centers;
    let deg = degree.min(pts.len().saturating_sub(1));
    let e = view.measured;
    if pts.is_empty() || deg == 0 {
        let c = pts.last().map(|p| p.1).unwrap_or(e.center());
        return PredictedObstacle::frozen(view.label, e.translated(c - e.center()), horizon);
    }
    let vander = DMatrix::from_fn(pts.len(), deg + 1, |i, j| (pts[i].0 - now).powi(j as i32));
    let bx = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1.x));
    let by = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1.y));
    let svd = vander.svd(true, true);
    let (cx, cy) = match (svd.solve(&bx, 1e-12), svd.solve(&by, 1e-12)) {
        (Ok(cx), Ok(cy)) => (cx, cy),
        _ => return PredictedObstacle::frozen(view.label, e, horizon),
    };
    let eval = |c: &DVector<f64>, t: f64| c.iter().enumerate().map(|(j, v)| v * t.powi(j as i32)).sum::<f64>();
    let steps = (0..=horizon)
        .map(|k| {
            let t = k as f64 * dt;
            let center = Vec2::new(eval(&cx, t), eval(&cy, t));
            let ellipse = e.translated(center - e.center());
            crate::tracking::PredictedStep {
                ellipse,
                nominal: ellipse,
                r: 0.0,
                sigma: 0.0,
            }
        })
        .collect();
    PredictedObstacle {
        label: view.label,
        steps,
    }
}

/// Obstacle trajectories each variant plans against.
pub fn variant_obstacles(
    kind: PlannerKind,
    views: &[ObstacleView],
    now: f64,
    params: &PlannerParams,
) -> Vec<PredictedObstacle> {
    let n = params.horizon;
    views
        .iter()
        .map(|v| match kind {
            PlannerKind::Euclid | PlannerKind::Cbf => PredictedObstacle::frozen(v.label, v.measured, n),
            PlannerKind::Kf | PlannerKind::Dcbf => v.prediction.clone(),
            PlannerKind::CbfCurvefit => curvefit_prediction(v, now, n, params.dt, 2),
        })
        .collect()
}

/// Runs one of the five planner variants on the same perception output.
pub fn plan_variant(
    kind: PlannerKind,
    x0: &RobotState,
    reference: &[RobotState],
    views: &[ObstacleView],
    now: f64,
    params: &PlannerParams,
    warm: &WarmStart,
) -> Result<MpcSolution, PlannerError> {
    let obstacles = variant_obstacles(kind, views, now, params);
    solve(x0, reference, &obstacles, kind.mode(), params, warm)
}

/// Polyline reference traversed at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub waypoints: Vec<Vec2>,
    pub speed: f64,
}

impl ReferencePath {
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// Arc length of the point on the path closest to `p`.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut acc = 0.0;
        for w in self.waypoints.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let t = if len > 0.0 {
                ((p - w[0]).dot(seg) / (len * len)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = p.dist(w[0] + seg.scale(t));
            if d < best.0 {
                best = (d, acc + t * len);
            }
            acc += len;
        }
        best.1
    }

    /// Point and tangent heading at arc length `s`, clamped to the ends.
    pub fn at(&self, s: f64) -> RobotState {
        let mut rest = s.max(0.0);
        let segments: Vec<_> = self.waypoints.windows(2).filter(|w| w[0].dist(w[1]) > 0.0).collect();
        for (i, w) in segments.iter().enumerate() {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if rest <= len || i + 1 == segments.len() {
                let p = w[0] + seg.scale(rest.min(len) / len);
                return RobotState::new(p.x, p.y, seg.angle());
            }
            rest -= len;
        }
        let p = self.waypoints.first().copied().unwrap_or(Vec2::new(0.0, 0.0));
        RobotState::new(p.x, p.y, 0.0)
    }

    /// `horizon + 1` reference states starting at the robot's projection.
    pub fn reference(&self, x: &RobotState, horizon: usize, dt: f64) -> Vec<RobotState> {
        let s0 = self.project(x.position());
        (0..=horizon)
            .map(|k| self.at(s0 + k as f64 * self.speed * dt))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn dynamics_examples() {
        let s = dynamics_step(&RobotState::new(0.0, 0.0, 0.0), ControlInput::new(1.0, 0.0), 0.1);
        assert_eq!((s.x, s.y, s.heading), (0.1, 0.0, 0.0));
        let s = dynamics_step(&RobotState::new(0.0, 0.0, FRAC_PI_2), ControlInput::new(1.0, 0.0), 0.1);
        assert_abs_diff_eq!(s.x, 0.0, epsilon = 1e-17);
        assert_abs_diff_eq!(s.y, 0.1, epsilon = 1e-17);
        assert_eq!(s.heading, FRAC_PI_2);
        let s = dynamics_step(&RobotState::new(0.0, 0.0, 0.0), ControlInput::new(0.0, 1.0), 0.5);
        assert_eq!((s.x, s.y, s.heading), (0.0, 0.0, 0.5));
    }

    #[test]
    fn barrier_examples() {
        let circle = Ellipse::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        let b = barrier(&RobotState::new(3.0, 0.0, 0.0), &circle, 0.5).unwrap();
        assert_abs_diff_eq!(b.h, 1.5, epsilon = 1e-15);
        let e = Ellipse::new(0.0, 0.0, 2.0, 1.0, 0.0).unwrap();
        let b = barrier(&RobotState::new(0.0, 3.0, 0.0), &e, 0.5).unwrap();
        assert_abs_diff_eq!(b.h, 1.5, epsilon = 1e-15);
        // on the boundary pushed out by d_safe along the ray
        let dir = Vec2::new(1.0, 1.0).scale(1.0 / 2f64.sqrt());
        let l = crate::geometry::ray_ellipse_distance(&e, dir).unwrap();
        let p = dir.scale(l + 0.5);
        assert_abs_diff_eq!(
            barrier(&RobotState::new(p.x, p.y, 0.0), &e, 0.5).unwrap().h,
            0.0,
            epsilon = 1e-12
        );
        assert!(barrier(&RobotState::default(), &e, 0.5).is_err());
    }

    #[test]
    fn cbf_residual_examples() {
        assert_abs_diff_eq!(cbf_residual(2.0, 1.8, 0.15), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(cbf_residual(2.0, 1.5, 0.15), -0.2, epsilon = 1e-12);
        let params = PlannerParams::default();
        let x = RobotState::new(4.0, 0.0, 0.0);
        let ob = Ellipse::new(0.0, 0.0, 1.0, 0.5, 0.3).unwrap();
        let h = barrier(&x, &ob, params.d_safe).unwrap().h;
        let r = cbf_constraint(&x, &x, &ob, &ob, &params).unwrap();
        assert_abs_diff_eq!(r, params.gamma_cbf * h, epsilon = 1e-12);
    }

    #[test]
    fn barrier_gradient_matches_finite_differences() {
        let e = Ellipse::new(0.3, -0.2, 1.7, 0.6, 0.8).unwrap();
        for p in [Vec2::new(3.0, 1.0), Vec2::new(-2.0, 2.5), Vec2::new(0.1, -3.0)] {
            let (_, g) = barrier_with_gradient(p, &e, 1.3);
            let f = |q: Vec2| barrier_with_gradient(q, &e, 1.3).0;
            let eps = 1e-6;
            let gx = (f(p + Vec2::new(eps, 0.0)) - f(p - Vec2::new(eps, 0.0))) / (2.0 * eps);
            let gy = (f(p + Vec2::new(0.0, eps)) - f(p - Vec2::new(0.0, eps))) / (2.0 * eps);
            assert_abs_diff_eq!(g.x, gx, epsilon = 1e-7);
            assert_abs_diff_eq!(g.y, gy, epsilon = 1e-7);
        }
    }

    #[test]
    fn rollout_jacobian_matches_finite_differences() {
        let x0 = RobotState::new(0.5, -1.0, 0.3);
        let controls: Vec<ControlInput> = (0..6)
            .map(|k| ControlInput::new(0.5 + 0.1 * k as f64, 0.2 - 0.1 * k as f64))
            .collect();
        let lin = linearize(&x0, &controls, 0.1);
        let base = to_vector(&controls);
        let eps = 1e-7;
        for col in 0..base.len() {
            let mut plus = base.clone();
            plus[col] += eps;
            let mut minus = base.clone();
            minus[col] -= eps;
            let sp = rollout(&x0, &from_vector(&plus), 0.1);
            let sm = rollout(&x0, &from_vector(&minus), 0.1);
            for k in 0..=controls.len() {
                let fd = [
                    (sp[k].x - sm[k].x) / (2.0 * eps),
                    (sp[k].y - sm[k].y) / (2.0 * eps),
                    wrap_angle(sp[k].heading - sm[k].heading) / (2.0 * eps),
                ];
                for (i, want) in fd.iter().enumerate() {
                    assert_abs_diff_eq!(lin.jac[k][(i, col)], *want, epsilon = 1e-6);
                }
            }
        }
    }

    fn straight_reference(x0: &RobotState, speed: f64, params: &PlannerParams) -> Vec<RobotState> {
        (0..=params.horizon)
            .map(|k| RobotState::new(x0.x + speed * params.dt * k as f64, x0.y, 0.0))
            .collect()
    }

    #[test]
    fn holds_position_when_at_reference() {
        let params = PlannerParams::default();
        let x0 = RobotState::new(1.0, 2.0, 0.0);
        let reference = vec![x0; params.horizon + 1];
        let sol = solve(
            &x0,
            &reference,
            &[],
            ConstraintMode::Decay,
            &params,
            &WarmStart::default(),
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.controls.iter().all(|u| u.v.abs() < 1e-6 && u.omega.abs() < 1e-6));
        assert!(sol.telemetry.cost < 1e-10);
    }

    #[test]
    fn tracks_straight_reference() {
        let params = PlannerParams::default();
        let x0 = RobotState::new(0.0, 0.0, 0.0);
        let reference = straight_reference(&x0, 1.0, &params);
        let warm = WarmStart::cold(ControlInput::new(1.0, 0.0));
        let sol = solve(&x0, &reference, &[], ConstraintMode::Decay, &params, &warm).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        for (u, x) in sol.controls.iter().zip(&sol.states[1..]) {
            assert!((u.v - 1.0).abs() < 0.05, "v = {}", u.v);
            assert!(x.y.abs() < 1e-9);
        }
        let n = params.horizon;
        assert!(sol.states[n].position().dist(reference[n].position()) < params.terminal_radius);
        // re-simulation matches the returned states
        let again = rollout(&x0, &sol.controls, params.dt);
        assert_eq!(again, sol.states);
    }

    #[test]
    fn avoids_static_circle_on_reference() {
        let params = PlannerParams::default();
        let x0 = RobotState::new(0.0, 0.0, 0.0);
        let reference = straight_reference(&x0, 1.0, &params);
        let ob = Ellipse::new(2.5, 0.05, 0.5, 0.5, 0.0).unwrap();
        let obstacles = [PredictedObstacle::frozen(0, ob, params.horizon)];
        let warm = WarmStart::cold(ControlInput::new(1.0, 0.0));
        let sol = solve(&x0, &reference, &obstacles, ConstraintMode::Decay, &params, &warm).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.min_residual() >= -1e-6);
        for x in &sol.states {
            assert!(barrier(x, &ob, params.d_safe).unwrap().h >= -1e-6);
        }
        for u in &sol.controls {
            assert!(u.v >= params.v_min && u.v <= params.v_max && u.omega.abs() <= params.omega_max);
        }
    }

    #[test]
    fn deterministic_given_warm_start() {
        let params = PlannerParams::default();
        let x0 = RobotState::new(0.0, 0.2, 0.1);
        let reference = straight_reference(&RobotState::new(0.0, 0.0, 0.0), 1.0, &params);
        let ob = Ellipse::new(3.0, -0.3, 0.8, 0.4, 0.5).unwrap();
        let obstacles = [PredictedObstacle::frozen(0, ob, params.horizon)];
        let warm = WarmStart::cold(ControlInput::new(0.8, 0.0));
        let a = solve(&x0, &reference, &obstacles, ConstraintMode::Decay, &params, &warm).unwrap();
        let b = solve(&x0, &reference, &obstacles, ConstraintMode::Decay, &params, &warm).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_reference_length() {
        let params = PlannerParams::default();
        let err = solve(
            &RobotState::default(),
            &[RobotState::default()],
            &[],
            ConstraintMode::Decay,
            &params,
            &WarmStart::default(),
        );
        assert_eq!(err.unwrap_err(), PlannerError::ReferenceLength { expected: 26, got: 1 });
    }

    #[test]
    fn planner_kind_names_round_trip() {
        for k in PlannerKind::ALL {
            assert_eq!(k.name().parse::<PlannerKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        let err = "mpc-fancy".parse::<PlannerKind>().unwrap_err().to_string();
        assert!(err.contains("mpc-dcbf") && err.contains("mpc-euclid"));
    }

    #[test]
    fn curvefit_recovers_quadratic_motion() {
        let centers: Vec<(f64, Vec2)> = (0..10)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, Vec2::new(1.0 + 0.5 * t + 0.2 * t * t, -t))
            })
            .collect();
        let view = ObstacleView {
            label: 4,
            measured: Ellipse::new(1.0 + 0.5 * 0.9 + 0.2 * 0.81, -0.9, 0.5, 0.3, 0.0).unwrap(),
            centers,
            prediction: PredictedObstacle::frozen(4, Ellipse::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap(), 5),
        };
        let p = curvefit_prediction(&view, 0.9, 5, 0.1, 2);
        for (k, step) in p.steps.iter().enumerate() {
            let t = 0.9 + 0.1 * k as f64;
            assert_abs_diff_eq!(step.ellipse.cx(), 1.0 + 0.5 * t + 0.2 * t * t, epsilon = 1e-9);
            assert_abs_diff_eq!(step.ellipse.cy(), -t, epsilon = 1e-9);
            assert_eq!(step.ellipse.a(), 0.5);
        }
    }

    #[test]
    fn reference_path_is_arc_length_matched() {
        let path = ReferencePath {
            waypoints: vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(2.0, 2.0)],
            speed: 1.0,
        };
        assert_eq!(path.length(), 4.0);
        let r = path.reference(&RobotState::new(1.0, 0.3, 0.0), 20, 0.1);
        assert_abs_diff_eq!(r[0].x, 1.0);
        assert_abs_diff_eq!(r[10].x, 2.0);
        assert_abs_diff_eq!(r[15].y, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r[15].heading, FRAC_PI_2);
        let end = path.reference(&RobotState::new(2.0, 5.0, 0.0), 3, 0.1);
        assert!(end.iter().all(|s| s.position() == Vec2::new(2.0, 2.0)));
    }
}
