//! Setpoint control of the upper tank levels L1..L3 through pump P1 and
//! valves V1/V2.
//!
//! The controller works on a linear model obtained by analytic
//! linearization of the nominal flow model (manual valves fully open) at a
//! strictly positive operating point, discretized for the 10 Hz control
//! loop. The MPC solves a finite-horizon quadratic tracking cost under box
//! constraints with projected gradient descent; a PI controller is
//! available as a simpler trace generator.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{ControlInputs, PlantConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("operating-point level for tank {tank} must be strictly positive, got {level_l} L")]
    SingularOperatingPoint { tank: usize, level_l: f64 },
    #[error("expected a continuous-time model")]
    NotContinuous,
    #[error("expected a discrete-time model")]
    NotDiscrete,
    #[error("control configuration error: {0}")]
    Config(String),
    #[error("optimizer did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("non-finite value in controller input")]
    NonFinite,
}

/// Levels and inputs the model is linearized around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Upper tank levels L1..L3 in liters, all strictly positive.
    pub levels_l: [f64; 3],
    /// Pump and valve fractions at the point.
    pub inputs: [f64; 3],
}

/// Linear state-space model `dx' = A dx + B du` (continuous) or
/// `dx+ = A dx + B du` (discrete) in deviations from the operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub operating_point: OperatingPoint,
    /// True until discretized.
    pub continuous: bool,
    /// Sample period once discretized.
    pub sample_period_s: Option<f64>,
}

/// Flow rates of the nominal three-tank model (manual valves fully open),
/// liters per second. Smooth in levels and inputs as long as levels stay
/// nonnegative.
pub fn nominal_rates(
    cfg: &PlantConfig,
    levels_l: &Vector3<f64>,
    inputs: &Vector3<f64>,
) -> Vector3<f64> {
    let level = |i: usize| cfg.level_m(i, levels_l[i]);
    let q_pump = cfg.pump_gain_l_per_s_at_full * inputs[0];
    let q_v1 = cfg.outflow_coefficient_v1 * inputs[1] * level(0).max(0.0).sqrt();
    let q_v2 = cfg.outflow_coefficient_v2 * inputs[2] * level(2).max(0.0).sqrt();
    let c12 = cfg.coupling_coefficient * (level(0) - level(1));
    let c23 = cfg.coupling_coefficient * (level(1) - level(2));
    Vector3::new(q_pump - q_v1 - c12, q_v1 + c12 - c23, c23 - q_v2)
}

/// Analytic Jacobians of [`nominal_rates`] at the operating point.
pub fn linearize(cfg: &PlantConfig, op: &OperatingPoint) -> Result<LinearModel, ControlError> {
    for (tank, &level) in op.levels_l.iter().enumerate() {
        if !level.is_finite() || level <= 0.0 {
            return Err(ControlError::SingularOperatingPoint {
                tank: tank + 1,
                level_l: level,
            });
        }
    }
    let g = [
        1.0 / (1000.0 * cfg.tank_cross_section_m2[0]),
        1.0 / (1000.0 * cfg.tank_cross_section_m2[1]),
        1.0 / (1000.0 * cfg.tank_cross_section_m2[2]),
    ];
    let l1 = cfg.level_m(0, op.levels_l[0]);
    let l3 = cfg.level_m(2, op.levels_l[2]);
    let s1 = l1.sqrt();
    let s3 = l3.sqrt();
    // d sqrt(level_i) / d volume_i
    let ds1 = g[0] / (2.0 * s1);
    let ds3 = g[2] / (2.0 * s3);
    let kc = cfg.coupling_coefficient;
    let c1 = cfg.outflow_coefficient_v1;
    let c2 = cfg.outflow_coefficient_v2;
    let (u1, u2) = (op.inputs[1], op.inputs[2]);

    let a = Matrix3::new(
        -c1 * u1 * ds1 - kc * g[0],
        kc * g[1],
        0.0,
        c1 * u1 * ds1 + kc * g[0],
        -2.0 * kc * g[1],
        kc * g[2],
        0.0,
        kc * g[1],
        -c2 * u2 * ds3 - kc * g[2],
    );
    let b = Matrix3::new(
        cfg.pump_gain_l_per_s_at_full,
        -c1 * s1,
        0.0,
        0.0,
        c1 * s1,
        0.0,
        0.0,
        0.0,
        -c2 * s3,
    );
    Ok(LinearModel {
        a,
        b,
        operating_point: *op,
        continuous: true,
        sample_period_s: None,
    })
}

/// How [`discretize`] maps the continuous model to the sample period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizeMethod {
    /// `A_d = I + Ts A`, `B_d = Ts B`. Exactly testable, adequate for the
    /// slow tank dynamics. Default.
    ForwardEuler,
    /// Matrix-exponential zero-order hold via truncated series.
    ZeroOrderHold,
}

/// Discretize a continuous model for sample period `ts` seconds.
pub fn discretize(
    model: &LinearModel,
    ts: f64,
    method: DiscretizeMethod,
) -> Result<LinearModel, ControlError> {
    if !model.continuous {
        return Err(ControlError::NotContinuous);
    }
    if !ts.is_finite() || ts <= 0.0 {
        return Err(ControlError::Config(format!(
            "sample period must be positive, got {ts}"
        )));
    }
    let (a_d, b_d) = match method {
        DiscretizeMethod::ForwardEuler => (Matrix3::identity() + model.a * ts, model.b * ts),
        DiscretizeMethod::ZeroOrderHold => {
            // A_d = exp(A Ts); B_d = (sum_{k>=1} A^(k-1) Ts^k / k!) B.
            // At iteration k, `term` holds (A Ts)^(k-1) / (k-1)!.
            let mut a_d = Matrix3::identity();
            let mut integral = Matrix3::zeros();
            let mut term = Matrix3::identity();
            for k in 1..=40 {
                integral += term * (ts / k as f64);
                term = term * model.a * (ts / k as f64);
                a_d += term;
                if term.norm() < 1e-17 {
                    break;
                }
            }
            (a_d, integral * model.b)
        }
    };
    Ok(LinearModel {
        a: a_d,
        b: b_d,
        operating_point: model.operating_point,
        continuous: false,
        sample_period_s: Some(ts),
    })
}

/// MPC tuning: horizon, weights, box bounds, loop period, and the
/// projected-gradient solver budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon_steps: usize,
    pub state_weight: f64,
    pub input_weight: f64,
    pub input_min: f64,
    pub input_max: f64,
    pub sample_period_s: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon_steps: 10,
            state_weight: 1.0,
            input_weight: 0.02,
            input_min: 0.0,
            input_max: 1.0,
            sample_period_s: 0.1,
            max_iterations: 200,
            tolerance: 1e-8,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.horizon_steps < 1 {
            return Err(ControlError::Config("horizon_steps must be >= 1".into()));
        }
        if self.state_weight < 0.0 || self.input_weight < 0.0 {
            return Err(ControlError::Config("weights must be >= 0".into()));
        }
        if !self.sample_period_s.is_finite() || self.sample_period_s <= 0.0 {
            return Err(ControlError::Config("sample_period_s must be > 0".into()));
        }
        if self.input_min >= self.input_max {
            return Err(ControlError::Config("empty input bounds".into()));
        }
        Ok(())
    }
}

fn forward_cost(
    model: &LinearModel,
    cfg: &MpcConfig,
    dx0: &Vector3<f64>,
    dxref: &Vector3<f64>,
    u: &[Vector3<f64>],
) -> f64 {
    let u_op = Vector3::from(model.operating_point.inputs);
    let mut x = *dx0;
    let mut cost = 0.0;
    for uk in u {
        let v = uk - u_op;
        cost += cfg.input_weight * v.dot(&v);
        x = model.a * x + model.b * v;
        let e = x - dxref;
        cost += cfg.state_weight * e.dot(&e);
    }
    cost
}

fn gradient(
    model: &LinearModel,
    cfg: &MpcConfig,
    dx0: &Vector3<f64>,
    dxref: &Vector3<f64>,
    u: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    let n = u.len();
    let u_op = Vector3::from(model.operating_point.inputs);
    let mut states = Vec::with_capacity(n);
    let mut x = *dx0;
    for uk in u {
        x = model.a * x + model.b * (uk - u_op);
        states.push(x);
    }
    let mut grad = vec![Vector3::zeros(); n];
    let mut lambda = Vector3::zeros();
    for k in (0..n).rev() {
        let e = states[k] - dxref;
        lambda = 2.0 * cfg.state_weight * e + model.a.transpose() * lambda;
        grad[k] = 2.0 * cfg.input_weight * (u[k] - u_op) + model.b.transpose() * lambda;
        if k > 0 {
            // lambda currently holds dJ/dx_k; propagate through A when
            // stepping to k-1 in the next iteration.
        }
    }
    grad
}

fn solve(
    model: &LinearModel,
    cfg: &MpcConfig,
    dx0: Vector3<f64>,
    dxref: Vector3<f64>,
    mut u: Vec<Vector3<f64>>,
) -> Result<(Vec<Vector3<f64>>, usize), ControlError> {
    let clamp = |v: Vector3<f64>| v.map(|x| x.clamp(cfg.input_min, cfg.input_max));
    for uk in &mut u {
        *uk = clamp(*uk);
    }
    let mut cost = forward_cost(model, cfg, &dx0, &dxref, &u);
    if !cost.is_finite() {
        return Err(ControlError::NonFinite);
    }
    // Descent direction: negative gradient with the components that push
    // into an active bound zeroed out. Zero direction means KKT optimal.
    let feasible_direction = |u: &[Vector3<f64>], grad: &[Vector3<f64>]| -> Vec<Vector3<f64>> {
        u.iter()
            .zip(grad)
            .map(|(uk, gk)| {
                Vector3::from_fn(|i, _| {
                    let blocked_low = uk[i] <= cfg.input_min && gk[i] > 0.0;
                    let blocked_high = uk[i] >= cfg.input_max && gk[i] < 0.0;
                    if blocked_low || blocked_high {
                        0.0
                    } else {
                        -gk[i]
                    }
                })
            })
            .collect()
    };
    for iter in 0..cfg.max_iterations {
        let grad = gradient(model, cfg, &dx0, &dxref, &u);
        let dir = feasible_direction(&u, &grad);
        let dir_sq: f64 = dir.iter().map(|d| d.dot(d)).sum();
        if dir_sq.sqrt() < cfg.tolerance {
            return Ok((u, iter));
        }
        // Exact line search along the feasible direction: curvature from
        // the linear response of the direction.
        let mut y = Vector3::zeros();
        let mut curv = 0.0;
        for dk in &dir {
            curv += cfg.input_weight * dk.dot(dk);
            y = model.a * y + model.b * dk;
            curv += cfg.state_weight * y.dot(&y);
        }
        let mut alpha = if curv > 0.0 {
            dir_sq / (2.0 * curv)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut residual = f64::INFINITY;
        let mut decrease = 0.0;
        for _ in 0..40 {
            let candidate: Vec<Vector3<f64>> = u
                .iter()
                .zip(&dir)
                .map(|(uk, dk)| clamp(uk + alpha * dk))
                .collect();
            let cand_cost = forward_cost(model, cfg, &dx0, &dxref, &candidate);
            if cand_cost <= cost {
                residual = candidate
                    .iter()
                    .zip(&u)
                    .map(|(a, b)| (a - b).amax())
                    .fold(0.0f64, f64::max);
                decrease = cost - cand_cost;
                u = candidate;
                cost = cand_cost;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        // Also converged when the iterate stops moving or the cost has
        // bottomed out at machine precision.
        if !accepted || residual < cfg.tolerance || decrease <= 1e-14 * (1.0 + cost) {
            return Ok((u, iter + 1));
        }
    }
    let grad = gradient(model, cfg, &dx0, &dxref, &u);
    let residual = feasible_direction(&u, &grad)
        .iter()
        .map(|d| d.amax())
        .fold(0.0f64, f64::max);
    Err(ControlError::NonConvergence {
        iterations: cfg.max_iterations,
        residual,
    })
}

/// One cold-started MPC solve: minimize the finite-horizon quadratic
/// tracking cost subject to the box constraints and return the first input
/// of the optimal sequence. Deterministic for identical arguments.
pub fn mpc_step(
    model: &LinearModel,
    measured_levels_l: [f64; 3],
    setpoints_l: [f64; 3],
    cfg: &MpcConfig,
) -> Result<ControlInputs, ControlError> {
    cfg.validate()?;
    if model.continuous {
        return Err(ControlError::NotDiscrete);
    }
    if measured_levels_l
        .iter()
        .chain(&setpoints_l)
        .any(|v| !v.is_finite())
    {
        return Err(ControlError::NonFinite);
    }
    let op = &model.operating_point;
    let dx0 = Vector3::from(measured_levels_l) - Vector3::from(op.levels_l);
    let dxref = Vector3::from(setpoints_l) - Vector3::from(op.levels_l);
    let init = vec![Vector3::from(op.inputs); cfg.horizon_steps];
    let (u, _) = solve(model, cfg, dx0, dxref, init)?;
    Ok(ControlInputs {
        pump: u[0][0],
        valve1: u[0][1],
        valve2: u[0][2],
    })
}

/// Stateful MPC wrapper: warm-starts each solve from the previous solution
/// and falls back to the previous input (flagging the frame) if the solver
/// fails to converge.
#[derive(Debug, Clone)]
pub struct MpcController {
    model: LinearModel,
    cfg: MpcConfig,
    plan: Vec<Vector3<f64>>,
    previous: ControlInputs,
    flagged_frames: u64,
}

impl MpcController {
    pub fn new(model: LinearModel, cfg: MpcConfig) -> Result<Self, ControlError> {
        cfg.validate()?;
        if model.continuous {
            return Err(ControlError::NotDiscrete);
        }
        let plan = vec![Vector3::from(model.operating_point.inputs); cfg.horizon_steps];
        let previous = ControlInputs {
            pump: model.operating_point.inputs[0].clamp(cfg.input_min, cfg.input_max),
            valve1: model.operating_point.inputs[1].clamp(cfg.input_min, cfg.input_max),
            valve2: model.operating_point.inputs[2].clamp(cfg.input_min, cfg.input_max),
        };
        Ok(MpcController {
            model,
            cfg,
            plan,
            previous,
            flagged_frames: 0,
        })
    }

    /// Frames where the solver failed and the previous input was held.
    pub fn flagged_frames(&self) -> u64 {
        self.flagged_frames
    }

    pub fn step(&mut self, measured_levels_l: [f64; 3], setpoints_l: [f64; 3]) -> ControlInputs {
        let op = &self.model.operating_point;
        let dx0 = Vector3::from(measured_levels_l) - Vector3::from(op.levels_l);
        let dxref = Vector3::from(setpoints_l) - Vector3::from(op.levels_l);
        // Shifted previous solution as warm start.
        let mut init = self.plan.clone();
        if init.len() > 1 {
            init.rotate_left(1);
            let last = *init.last().unwrap();
            *init.last_mut().unwrap() = last;
        }
        match solve(&self.model, &self.cfg, dx0, dxref, init) {
            Ok((u, _)) => {
                let inputs = ControlInputs {
                    pump: u[0][0],
                    valve1: u[0][1],
                    valve2: u[0][2],
                };
                self.plan = u;
                self.previous = inputs;
                inputs
            }
            Err(_) => {
                self.flagged_frames += 1;
                self.previous
            }
        }
    }
}

/// Per-loop PI gains. Loop pairing: P1 regulates L1, V1 regulates L2, V2
/// regulates L3 (drain loop, reversed error sign).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    /// Feedforward equilibrium input per loop.
    pub bias: [f64; 3],
    pub sample_period_s: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        PiGains {
            kp: [0.8, 0.8, 0.8],
            ki: [0.05, 0.05, 0.05],
            bias: [0.0, 0.0, 0.0],
            sample_period_s: 0.1,
        }
    }
}

/// Integrator state of the three PI loops.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    pub integrators: [f64; 3],
}

/// Discrete PI step with conditional-integration anti-windup; outputs are
/// clamped to [0, 1].
pub fn pi_step(
    levels_l: [f64; 3],
    setpoints_l: [f64; 3],
    gains: &PiGains,
    state: &mut PiState,
) -> ControlInputs {
    let errors = [
        setpoints_l[0] - levels_l[0],
        setpoints_l[1] - levels_l[1],
        // Drain loop: open V2 when L3 is above its setpoint.
        levels_l[2] - setpoints_l[2],
    ];
    let mut out = [0.0f64; 3];
    for i in 0..3 {
        let raw = gains.bias[i] + gains.kp[i] * errors[i] + gains.ki[i] * state.integrators[i];
        let clamped = raw.clamp(0.0, 1.0);
        let saturated_up = raw > 1.0 && errors[i] > 0.0;
        let saturated_down = raw < 0.0 && errors[i] < 0.0;
        if !(saturated_up || saturated_down) {
            state.integrators[i] += errors[i] * gains.sample_period_s;
        }
        out[i] = clamped;
    }
    ControlInputs {
        pump: out[0],
        valve1: out[1],
        valve2: out[2],
    }
}

/// Approximate equilibrium inputs holding the given upper-tank levels,
/// from the steady-state balance of the nominal flow model (clamped to
/// [0, 1]). Useful for building operating points.
pub fn equilibrium_inputs(cfg: &PlantConfig, levels_l: [f64; 3]) -> [f64; 3] {
    let l1 = cfg.level_m(0, levels_l[0]);
    let l2 = cfg.level_m(1, levels_l[1]);
    let l3 = cfg.level_m(2, levels_l[2]);
    let kc = cfg.coupling_coefficient;
    let q23 = kc * (l2 - l3);
    let q12 = kc * (l1 - l2);
    let u2 = if l3 > 0.0 {
        q23 / (cfg.outflow_coefficient_v2 * l3.sqrt())
    } else {
        0.0
    };
    let u1 = if l1 > 0.0 {
        (q23 - q12).max(0.0) / (cfg.outflow_coefficient_v1 * l1.sqrt())
    } else {
        0.0
    };
    let q_v1 = cfg.outflow_coefficient_v1 * u1.clamp(0.0, 1.0) * l1.sqrt();
    let u0 = (q_v1 + q12).max(0.0) / cfg.pump_gain_l_per_s_at_full;
    [u0.clamp(0.0, 1.0), u1.clamp(0.0, 1.0), u2.clamp(0.0, 1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantState;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    fn op(levels: [f64; 3], inputs: [f64; 3]) -> OperatingPoint {
        OperatingPoint {
            levels_l: levels,
            inputs,
        }
    }

    #[test]
    fn closed_valve_jacobian_has_only_coupling_terms() {
        let cfg = cfg();
        let model = linearize(&cfg, &op([5.0, 4.0, 3.0], [0.0, 0.0, 0.0])).unwrap();
        let g: Vec<f64> = (0..3)
            .map(|i| 1.0 / (1000.0 * cfg.tank_cross_section_m2[i]))
            .collect();
        let kc = cfg.coupling_coefficient;
        let expected = Matrix3::new(
            -kc * g[0],
            kc * g[1],
            0.0,
            kc * g[0],
            -2.0 * kc * g[1],
            kc * g[2],
            0.0,
            kc * g[1],
            -kc * g[2],
        );
        assert!((model.a - expected).norm() < 1e-15);
        // P1 column of B points along the pump gain.
        assert_eq!(model.b.column(0)[0], cfg.pump_gain_l_per_s_at_full);
        assert_eq!(model.b.column(0)[1], 0.0);
        assert_eq!(model.b.column(0)[2], 0.0);
    }

    #[test]
    fn jacobians_match_central_finite_differences() {
        let cfg = cfg();
        let point = op([6.2, 3.1, 4.7], [0.4, 0.6, 0.3]);
        let model = linearize(&cfg, &point).unwrap();
        let x0 = Vector3::from(point.levels_l);
        let u0 = Vector3::from(point.inputs);
        let h = 1e-5;
        for j in 0..3 {
            let mut dx = Vector3::zeros();
            dx[j] = h;
            let fd_a = (nominal_rates(&cfg, &(x0 + dx), &u0)
                - nominal_rates(&cfg, &(x0 - dx), &u0))
                / (2.0 * h);
            let fd_b = (nominal_rates(&cfg, &x0, &(u0 + dx))
                - nominal_rates(&cfg, &x0, &(u0 - dx)))
                / (2.0 * h);
            for i in 0..3 {
                let scale_a = model.a[(i, j)].abs().max(1e-9);
                assert!(
                    (model.a[(i, j)] - fd_a[i]).abs() / scale_a < 1e-6,
                    "A[{i}][{j}]: analytic {} vs fd {}",
                    model.a[(i, j)],
                    fd_a[i]
                );
                let scale_b = model.b[(i, j)].abs().max(1e-9);
                assert!(
                    (model.b[(i, j)] - fd_b[i]).abs() / scale_b < 1e-6,
                    "B[{i}][{j}]: analytic {} vs fd {}",
                    model.b[(i, j)],
                    fd_b[i]
                );
            }
        }
    }

    #[test]
    fn jacobian_entries_are_affine_in_outflow_coefficient() {
        let point = op([5.0, 4.0, 3.0], [0.5, 0.5, 0.5]);
        let model_at = |scale: f64| {
            let mut c = cfg();
            c.outflow_coefficient_v2 *= scale;
            linearize(&c, &point).unwrap()
        };
        let (m1, m2, m3) = (model_at(1.0), model_at(2.0), model_at(3.0));
        // Equal increments in the coefficient give equal increments in the
        // affected entries.
        assert!(((m2.a[(2, 2)] - m1.a[(2, 2)]) - (m3.a[(2, 2)] - m2.a[(2, 2)])).abs() < 1e-12);
        // The V2 column of B is purely linear in the coefficient.
        assert!((m2.b[(2, 2)] - 2.0 * m1.b[(2, 2)]).abs() < 1e-12);
    }

    #[test]
    fn zero_operating_level_is_singular() {
        assert!(matches!(
            linearize(&cfg(), &op([5.0, 0.0, 3.0], [0.0; 3])).unwrap_err(),
            ControlError::SingularOperatingPoint { tank: 2, .. }
        ));
    }

    fn scalar_model(a: f64, b: f64) -> LinearModel {
        let mut mat_a = Matrix3::zeros();
        mat_a[(0, 0)] = a;
        let mut mat_b = Matrix3::zeros();
        mat_b[(0, 0)] = b;
        LinearModel {
            a: mat_a,
            b: mat_b,
            operating_point: op([0.0; 3], [0.0; 3]),
            continuous: true,
            sample_period_s: None,
        }
    }

    #[test]
    fn zero_dynamics_discretize_to_identity_and_scaled_input() {
        let model = scalar_model(0.0, 2.0);
        for method in [
            DiscretizeMethod::ForwardEuler,
            DiscretizeMethod::ZeroOrderHold,
        ] {
            let d = discretize(&model, 0.1, method).unwrap();
            assert!((d.a - Matrix3::identity()).norm() < 1e-14);
            assert!((d.b - model.b * 0.1).norm() < 1e-14);
        }
    }

    #[test]
    fn small_period_approaches_identity() {
        let model = linearize(&cfg(), &op([5.0, 4.0, 3.0], [0.5, 0.5, 0.5])).unwrap();
        for method in [
            DiscretizeMethod::ForwardEuler,
            DiscretizeMethod::ZeroOrderHold,
        ] {
            let mut previous = f64::INFINITY;
            for ts in [1e-2, 1e-3, 1e-4] {
                let d = discretize(&model, ts, method).unwrap();
                let distance = (d.a - Matrix3::identity()).norm();
                assert!(distance < model.a.norm() * ts * 1.01);
                assert!(distance < previous);
                previous = distance;
            }
        }
    }

    #[test]
    fn scalar_forward_euler_matches_hand_formula() {
        let model = scalar_model(-1.0, 1.0);
        let d = discretize(&model, 0.1, DiscretizeMethod::ForwardEuler).unwrap();
        assert_eq!(d.a[(0, 0)], 0.9);
        assert_eq!(d.b[(0, 0)], 0.1);
        assert!(!d.continuous);
        assert_eq!(d.sample_period_s, Some(0.1));
    }

    #[test]
    fn scalar_zero_order_hold_matches_exponential() {
        // a = -1, b = 1: A_d = e^(-Ts), B_d = 1 - e^(-Ts).
        let model = scalar_model(-1.0, 1.0);
        let d = discretize(&model, 0.1, DiscretizeMethod::ZeroOrderHold).unwrap();
        assert!((d.a[(0, 0)] - (-0.1f64).exp()).abs() < 1e-15);
        assert!((d.b[(0, 0)] - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_measurement_returns_operating_input() {
        let cfg = cfg();
        let point = op([5.0, 4.0, 3.0], [0.3, 0.2, 0.4]);
        let model = discretize(
            &linearize(&cfg, &point).unwrap(),
            0.1,
            DiscretizeMethod::ForwardEuler,
        )
        .unwrap();
        let inputs = mpc_step(
            &model,
            point.levels_l,
            point.levels_l,
            &MpcConfig::default(),
        )
        .unwrap();
        assert!((inputs.pump - 0.3).abs() < 1e-9);
        assert!((inputs.valve1 - 0.2).abs() < 1e-9);
        assert!((inputs.valve2 - 0.4).abs() < 1e-9);
    }

    #[test]
    fn low_level_raises_pump_command() {
        let cfg = cfg();
        let point = op([5.0, 4.0, 3.0], [0.3, 0.2, 0.4]);
        let model = discretize(
            &linearize(&cfg, &point).unwrap(),
            0.1,
            DiscretizeMethod::ForwardEuler,
        )
        .unwrap();
        let inputs = mpc_step(
            &model,
            [4.0, 4.0, 3.0],
            point.levels_l,
            &MpcConfig::default(),
        )
        .unwrap();
        assert!(
            inputs.pump > 0.3,
            "pump must rise above equilibrium, got {}",
            inputs.pump
        );
    }

    #[test]
    fn two_step_horizon_matches_grid_search() {
        // Scalar discrete system x+ = 0.9 x + 0.1 u embedded in the first
        // state; the other input channels have zero effect and settle at
        // the operating input, so the exhaustive oracle only needs to scan
        // the first channel.
        let mut model = scalar_model(0.0, 0.0);
        model.continuous = false;
        model.sample_period_s = Some(0.1);
        model.a[(0, 0)] = 0.9;
        model.b[(0, 0)] = 0.1;
        let cfg = MpcConfig {
            horizon_steps: 2,
            state_weight: 1.0,
            input_weight: 0.1,
            ..MpcConfig::default()
        };
        let measured = [-1.0, 0.0, 0.0];
        let setpoints = [0.0, 0.0, 0.0];

        let inputs = mpc_step(&model, measured, setpoints, &cfg).unwrap();
        // Cost of the solver's full sequence: recompute by re-solving and
        // evaluating the first step's trajectory explicitly.
        let x0 = -1.0;
        let cost_of = |u0: f64, u1: f64| {
            let x1 = 0.9 * x0 + 0.1 * u0;
            let x2 = 0.9 * x1 + 0.1 * u1;
            0.1 * (u0 * u0 + u1 * u1) + (x1 * x1 + x2 * x2)
        };
        let mut best = f64::INFINITY;
        for i in 0..=1000 {
            for j in 0..=1000 {
                let c = cost_of(i as f64 * 0.001, j as f64 * 0.001);
                if c < best {
                    best = c;
                }
            }
        }
        // The solver returns only the first input; recover its cost by
        // minimizing over the second step analytically on the grid.
        let mut solver_best = f64::INFINITY;
        for j in 0..=1000 {
            let c = cost_of(inputs.pump, j as f64 * 0.001);
            if c < solver_best {
                solver_best = c;
            }
        }
        assert!(
            (solver_best - best).abs() < 1e-4,
            "solver cost {solver_best} vs grid {best}"
        );
    }

    #[test]
    fn mpc_step_is_deterministic() {
        let cfg = cfg();
        let point = op([5.0, 4.0, 3.0], [0.3, 0.2, 0.4]);
        let model = discretize(
            &linearize(&cfg, &point).unwrap(),
            0.1,
            DiscretizeMethod::ForwardEuler,
        )
        .unwrap();
        let a = mpc_step(
            &model,
            [4.5, 4.2, 2.8],
            [5.0, 4.0, 3.0],
            &MpcConfig::default(),
        )
        .unwrap();
        let b = mpc_step(
            &model,
            [4.5, 4.2, 2.8],
            [5.0, 4.0, 3.0],
            &MpcConfig::default(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mpc_inputs_always_within_bounds() {
        let cfg = cfg();
        let point = op([5.0, 4.0, 3.0], [0.3, 0.2, 0.4]);
        let model = discretize(
            &linearize(&cfg, &point).unwrap(),
            0.1,
            DiscretizeMethod::ForwardEuler,
        )
        .unwrap();
        for measured in [[0.0, 0.0, 20.0], [20.0, 0.1, 0.1], [0.1, 20.0, 9.0]] {
            let inputs =
                mpc_step(&model, measured, [5.0, 4.0, 3.0], &MpcConfig::default()).unwrap();
            for v in [inputs.pump, inputs.valve1, inputs.valve2] {
                assert!((0.0..=1.0).contains(&v), "input {v} out of bounds");
            }
        }
    }

    #[test]
    fn solver_failure_falls_back_to_previous_input_and_flags() {
        let cfg = cfg();
        let point = op([5.0, 4.0, 3.0], [0.3, 0.2, 0.4]);
        let model = discretize(
            &linearize(&cfg, &point).unwrap(),
            0.1,
            DiscretizeMethod::ForwardEuler,
        )
        .unwrap();
        let mut controller = MpcController::new(model, MpcConfig::default()).unwrap();
        let good = controller.step([4.5, 4.0, 3.0], [5.0, 4.0, 3.0]);
        assert_eq!(controller.flagged_frames(), 0);
        let held = controller.step([f64::NAN, 4.0, 3.0], [5.0, 4.0, 3.0]);
        assert_eq!(controller.flagged_frames(), 1);
        assert_eq!(held, good, "frame must hold the previous input");
    }

    #[test]
    fn pi_equilibrium_returns_bias() {
        let gains = PiGains {
            bias: [0.3, 0.1, 0.2],
            ..PiGains::default()
        };
        let mut state = PiState::default();
        let inputs = pi_step([5.0, 4.0, 3.0], [5.0, 4.0, 3.0], &gains, &mut state);
        assert_eq!(inputs.pump, 0.3);
        assert_eq!(inputs.valve1, 0.1);
        assert_eq!(inputs.valve2, 0.2);
        assert_eq!(state.integrators, [0.0; 3]);
    }

    #[test]
    fn constant_error_ramps_command_until_clamp() {
        let gains = PiGains::default();
        let mut state = PiState::default();
        let mut previous = -1.0;
        let mut clamped = false;
        for _ in 0..400 {
            let inputs = pi_step([4.0, 4.0, 3.0], [5.0, 4.0, 3.0], &gains, &mut state);
            assert!(inputs.pump >= previous, "command must not decrease");
            previous = inputs.pump;
            if inputs.pump == 1.0 {
                clamped = true;
                break;
            }
        }
        assert!(clamped, "integrator must eventually saturate the command");
    }

    #[test]
    fn pi_closed_loop_matches_hand_recurrence() {
        // Scalar test model x+ = 0.9 x + 0.1 u on the first loop.
        let gains = PiGains {
            kp: [0.5, 0.0, 0.0],
            ki: [0.2, 0.0, 0.0],
            bias: [0.0; 3],
            sample_period_s: 0.1,
        };
        let mut state = PiState::default();
        let setpoint = 1.0;
        let mut x = 0.0;
        // Independent recurrence of the same discrete loop.
        let mut x_oracle = 0.0;
        let mut integ = 0.0;
        for _ in 0..100 {
            let u = pi_step([x, 0.0, 0.0], [setpoint, 0.0, 0.0], &gains, &mut state);
            let e = setpoint - x_oracle;
            let raw = 0.5 * e + 0.2 * integ;
            let u_oracle = raw.clamp(0.0, 1.0);
            if !(raw > 1.0 && e > 0.0 || raw < 0.0 && e < 0.0) {
                integ += e * 0.1;
            }
            assert!((u.pump - u_oracle).abs() < 1e-12);
            x = 0.9 * x + 0.1 * u.pump;
            x_oracle = 0.9 * x_oracle + 0.1 * u_oracle;
        }
    }

    #[test]
    fn nominal_closed_loop_regulates_to_setpoints() {
        let cfg = cfg();
        let setpoints = [6.0, 4.5, 2.5];
        let point = OperatingPoint {
            levels_l: setpoints,
            inputs: equilibrium_inputs(&cfg, setpoints),
        };
        let model = discretize(
            &linearize(&cfg, &point).unwrap(),
            0.1,
            DiscretizeMethod::ForwardEuler,
        )
        .unwrap();
        let mut controller = MpcController::new(model, MpcConfig::default()).unwrap();
        let mut state: PlantState = cfg.init_state([5.0, 4.0, 3.5, 6.0]).unwrap();
        let band = 0.4;
        let mut within_since = None;
        for k in 0..1200 {
            let levels = [state.volumes_l[0], state.volumes_l[1], state.volumes_l[2]];
            let inputs = controller.step(levels, setpoints);
            for _ in 0..10 {
                state = state.step(&cfg, inputs, cfg.dt_sim_s).unwrap();
            }
            let err = (0..3)
                .map(|i| (state.volumes_l[i] - setpoints[i]).abs())
                .fold(0.0f64, f64::max);
            if err < band {
                within_since.get_or_insert(k);
            } else {
                within_since = None;
            }
        }
        assert_eq!(
            controller.flagged_frames(),
            0,
            "solver must converge every frame"
        );
        let settled = within_since.expect("levels never regulated into the band");
        assert!(
            settled < 900,
            "regulation must hold through the tail of the run, entered band at step {settled}"
        );
    }
}
