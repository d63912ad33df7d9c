//! Driven-compass equation of motion and its deterministic integration.
//!
//! The model is a magnetic compass needle in a fixed field plus a field
//! rotating at unit angular frequency, in dimensionless form:
//!
//! ```text
//! theta'' + alpha * theta' = -x * sin(theta) - P * sin(theta - t)
//! ```
//!
//! `x` acts as the analyser-knob parameter of the measurement experiments.
//! Integration is performed in unwrapped coordinates; angles are wrapped to
//! `(-pi, pi]` only for reporting, dichotomization, and separation metrics,
//! so the right-hand side stays smooth during stepping.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default dimensionless friction coefficient.
pub const DEFAULT_ALPHA: f64 = 0.174;
/// Default dimensionless rotating-field amplitude.
pub const DEFAULT_P: f64 = 0.335;

/// Model constants shared by every analyser in an experiment: only the
/// fixed-field amplitude `x` differs between analyser settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Model {
    pub alpha: f64,
    pub p: f64,
}

impl Default for Model {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            p: DEFAULT_P,
        }
    }
}

impl Model {
    /// Full parameter set for one analyser setting `x`.
    pub fn params(&self, x: f64) -> Result<CompassParams> {
        CompassParams::new(self.alpha, self.p, x)
    }
}

/// Dimensionless constants of the equation of motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompassParams {
    /// Friction coefficient, >= 0.
    pub alpha: f64,
    /// Rotating-field amplitude, >= 0.
    pub p: f64,
    /// Fixed-field amplitude (the analyser knob), >= 0.
    pub x: f64,
}

impl CompassParams {
    pub fn new(alpha: f64, p: f64, x: f64) -> Result<Self> {
        if !(alpha.is_finite() && p.is_finite() && x.is_finite()) {
            return Err(Error::InvalidParameter(
                "compass parameters must be finite".into(),
            ));
        }
        if alpha < 0.0 || p < 0.0 || x < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "compass parameters must be non-negative (alpha = {alpha}, P = {p}, x = {x})"
            )));
        }
        Ok(Self { alpha, p, x })
    }

    /// Default friction and drive with the given fixed-field amplitude.
    pub fn with_x(x: f64) -> Result<Self> {
        Self::new(DEFAULT_ALPHA, DEFAULT_P, x)
    }
}

/// Point of phase space: angle and angular velocity. Doubles as hidden
/// variable (initial condition) and as trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseState {
    /// Angle in radians (unwrapped).
    pub theta: f64,
    /// Angular velocity in radians per dimensionless time unit.
    pub theta_dot: f64,
}

impl PhaseState {
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        Self { theta, theta_dot }
    }

    pub const ZERO: PhaseState = PhaseState {
        theta: 0.0,
        theta_dot: 0.0,
    };

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.theta_dot.is_finite()
    }

    /// Angle reduced to `(-pi, pi]`.
    pub fn wrapped_theta(&self) -> f64 {
        wrap_angle(self.theta)
    }

    /// Component-wise sum; used to apply hidden-variable corrections.
    pub fn offset(&self, delta: PhaseState) -> PhaseState {
        PhaseState {
            theta: self.theta + delta.theta,
            theta_dot: self.theta_dot + delta.theta_dot,
        }
    }
}

/// Integration scheme selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrationMethod {
    /// Fixed-step classical 4th-order Runge-Kutta: the canonical
    /// deterministic reference. Bit-reproducible for identical inputs.
    #[serde(rename = "rk4")]
    Rk4Fixed,
    /// Adaptive Dormand-Prince 5(4) embedded pair, available as a
    /// cross-check of the fixed-step results.
    #[serde(rename = "rk45")]
    Rk45Adaptive,
}

/// Integrator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSettings {
    pub method: IntegrationMethod,
    /// Fixed-step size (also the initial trial step in adaptive mode).
    pub step: f64,
    /// Relative tolerance for adaptive mode.
    pub rel_tol: f64,
    /// Absolute tolerance for adaptive mode.
    pub abs_tol: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::Rk4Fixed,
            step: 1e-3,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "integrator step must be positive, got {}",
                self.step
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "integrator tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub t: f64,
    pub state: PhaseState,
}

/// Time-ordered solution samples together with the inputs that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub params: CompassParams,
    pub settings: IntegratorSettings,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn final_state(&self) -> PhaseState {
        self.samples.last().expect("trajectory is never empty").state
    }

    /// CSV export, header `t,theta,theta_dot,theta_wrapped`, full double
    /// precision (17 significant digits).
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,theta,theta_dot,theta_wrapped")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(s.t),
                fmt_f64(s.state.theta),
                fmt_f64(s.state.theta_dot),
                fmt_f64(s.state.wrapped_theta())
            )?;
        }
        Ok(())
    }
}

/// Format a double with 17 significant digits so the value round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reduce an angle to the half-open interval `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Right-hand side of the equation of motion. Returns
/// `(dtheta/dt, dtheta_dot/dt)`.
#[inline]
pub fn deriv(params: &CompassParams, t: f64, s: PhaseState) -> (f64, f64) {
    (
        s.theta_dot,
        -params.alpha * s.theta_dot - params.x * s.theta.sin() - params.p * (s.theta - t).sin(),
    )
}

#[inline]
fn rk4_step(params: &CompassParams, t: f64, s: PhaseState, h: f64) -> PhaseState {
    let (k1t, k1v) = deriv(params, t, s);
    let (k2t, k2v) = deriv(
        params,
        t + 0.5 * h,
        PhaseState::new(s.theta + 0.5 * h * k1t, s.theta_dot + 0.5 * h * k1v),
    );
    let (k3t, k3v) = deriv(
        params,
        t + 0.5 * h,
        PhaseState::new(s.theta + 0.5 * h * k2t, s.theta_dot + 0.5 * h * k2v),
    );
    let (k4t, k4v) = deriv(
        params,
        t + h,
        PhaseState::new(s.theta + h * k3t, s.theta_dot + h * k3v),
    );
    PhaseState::new(
        s.theta + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
        s.theta_dot + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )
}

/// Advance `n` fixed RK4 steps of size `h` from `t0`. Step times are formed
/// as `t0 + j*h` (no accumulation) so long runs keep full phase accuracy.
pub(crate) fn advance_fixed(
    params: &CompassParams,
    mut s: PhaseState,
    t0: f64,
    h: f64,
    n: u64,
) -> Result<PhaseState> {
    for j in 0..n {
        let t = t0 + j as f64 * h;
        s = rk4_step(params, t, s, h);
        if !s.is_finite() {
            return Err(Error::NonFiniteState { t: t + h });
        }
    }
    Ok(s)
}

/// Number of fixed steps covering `[0, t_end]` at nominal step `h`: the
/// nearest step count, at least one. The realized end time `n*h` differs
/// from `t_end` by at most half a step.
pub(crate) fn step_count(t_end: f64, h: f64) -> u64 {
    ((t_end / h).round() as u64).max(1)
}

/// Substep count and size that split `span` into equal steps no larger
/// than the nominal `h`, so span endpoints are hit exactly.
pub(crate) fn span_steps(span: f64, h: f64) -> (u64, f64) {
    let n = ((span / h).ceil() as u64).max(1);
    (n, span / n as f64)
}

/// Integrate the equation of motion from `initial` up to `t_end`,
/// keeping every `sample_every`-th step (plus the initial and final
/// states). Deterministic: identical inputs give bit-identical output.
pub fn integrate(
    params: &CompassParams,
    initial: PhaseState,
    t_end: f64,
    settings: &IntegratorSettings,
    sample_every: usize,
) -> Result<Trajectory> {
    settings.validate()?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if sample_every == 0 {
        return Err(Error::InvalidParameter(
            "sample_every must be at least 1".into(),
        ));
    }
    if !initial.is_finite() {
        return Err(Error::InvalidParameter(
            "initial state must be finite".into(),
        ));
    }

    let samples = match settings.method {
        IntegrationMethod::Rk4Fixed => {
            let h = settings.step;
            let n = step_count(t_end, h);
            let mut samples = Vec::with_capacity((n / sample_every as u64 + 2) as usize);
            samples.push(Sample {
                t: 0.0,
                state: initial,
            });
            let mut s = initial;
            for j in 0..n {
                let t = j as f64 * h;
                s = rk4_step(params, t, s, h);
                if !s.is_finite() {
                    return Err(Error::NonFiniteState { t: t + h });
                }
                let done = j + 1;
                if done.is_multiple_of(sample_every as u64) || done == n {
                    samples.push(Sample {
                        t: done as f64 * h,
                        state: s,
                    });
                }
            }
            samples
        }
        IntegrationMethod::Rk45Adaptive => rk45_integrate(params, initial, t_end, settings, sample_every)?,
    };
    Ok(Trajectory {
        params: *params,
        settings: *settings,
        samples,
    })
}

/// Final state at measuring time `t_m`; convenience wrapper over the
/// integrator that skips sample storage.
pub fn state_at(
    params: &CompassParams,
    initial: PhaseState,
    t_m: f64,
    settings: &IntegratorSettings,
) -> Result<PhaseState> {
    settings.validate()?;
    if !(t_m.is_finite() && t_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "t_m must be positive, got {t_m}"
        )));
    }
    if !initial.is_finite() {
        return Err(Error::InvalidParameter(
            "initial state must be finite".into(),
        ));
    }
    match settings.method {
        IntegrationMethod::Rk4Fixed => {
            advance_fixed(params, initial, 0.0, settings.step, step_count(t_m, settings.step))
        }
        IntegrationMethod::Rk45Adaptive => {
            rk45_final_state(params, initial, 0.0, t_m, settings)
        }
    }
}

// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order solution weights equal the last A row; error weights are the
// difference to the embedded 4th-order solution.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Rk45Step {
    state: PhaseState,
    error_norm: f64,
}

fn rk45_trial(params: &CompassParams, t: f64, s: PhaseState, h: f64, settings: &IntegratorSettings) -> Rk45Step {
    let mut k = [(0.0_f64, 0.0_f64); 7];
    k[0] = deriv(params, t, s);
    for i in 0..6 {
        let mut acc_t = 0.0;
        let mut acc_v = 0.0;
        for (j, kj) in k.iter().enumerate().take(i + 1) {
            acc_t += DP_A[i][j] * kj.0;
            acc_v += DP_A[i][j] * kj.1;
        }
        k[i + 1] = deriv(
            params,
            t + DP_C[i] * h,
            PhaseState::new(s.theta + h * acc_t, s.theta_dot + h * acc_v),
        );
    }
    // k[6] is the derivative at the 5th-order solution point (FSAL form);
    // the solution itself was assembled with the last A row.
    let mut sol_t = 0.0;
    let mut sol_v = 0.0;
    for (j, kj) in k.iter().enumerate().take(6) {
        sol_t += DP_A[5][j] * kj.0;
        sol_v += DP_A[5][j] * kj.1;
    }
    let state = PhaseState::new(s.theta + h * sol_t, s.theta_dot + h * sol_v);

    let mut err_t = 0.0;
    let mut err_v = 0.0;
    for (j, kj) in k.iter().enumerate() {
        err_t += DP_E[j] * kj.0;
        err_v += DP_E[j] * kj.1;
    }
    err_t *= h;
    err_v *= h;
    let scale_t = settings.abs_tol + settings.rel_tol * s.theta.abs().max(state.theta.abs());
    let scale_v =
        settings.abs_tol + settings.rel_tol * s.theta_dot.abs().max(state.theta_dot.abs());
    let error_norm = ((err_t / scale_t).powi(2) + (err_v / scale_v).powi(2)).sqrt()
        / std::f64::consts::SQRT_2;
    Rk45Step { state, error_norm }
}

fn rk45_advance<F: FnMut(f64, PhaseState)>(
    params: &CompassParams,
    mut s: PhaseState,
    t0: f64,
    t1: f64,
    settings: &IntegratorSettings,
    mut on_accept: F,
) -> Result<PhaseState> {
    let mut t = t0;
    let mut h = settings.step.min(t1 - t0);
    let mut rejections_in_a_row = 0u32;
    while t < t1 {
        // Clamp the final step so the integration lands on t1 exactly.
        let last = h >= t1 - t;
        if last {
            h = t1 - t;
        }
        let trial = rk45_trial(params, t, s, h, settings);
        if !trial.state.is_finite() || !trial.error_norm.is_finite() {
            return Err(Error::NonFiniteState { t });
        }
        if trial.error_norm <= 1.0 {
            t = if last { t1 } else { t + h };
            s = trial.state;
            on_accept(t, s);
            rejections_in_a_row = 0;
        } else {
            rejections_in_a_row += 1;
            if rejections_in_a_row > 60 {
                return Err(Error::NonFiniteState { t });
            }
        }
        let factor = if trial.error_norm > 0.0 {
            0.9 * trial.error_norm.powf(-0.2)
        } else {
            5.0
        };
        h *= factor.clamp(0.2, 5.0);
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::NonFiniteState { t });
        }
    }
    Ok(s)
}

fn rk45_integrate(
    params: &CompassParams,
    initial: PhaseState,
    t_end: f64,
    settings: &IntegratorSettings,
    sample_every: usize,
) -> Result<Vec<Sample>> {
    let mut samples = vec![Sample {
        t: 0.0,
        state: initial,
    }];
    let mut accepted: u64 = 0;
    let last = rk45_advance(params, initial, 0.0, t_end, settings, |t, s| {
        accepted += 1;
        if accepted.is_multiple_of(sample_every as u64) {
            samples.push(Sample { t, state: s });
        }
    })?;
    if samples.last().map(|s| s.t) != Some(t_end) {
        samples.push(Sample {
            t: t_end,
            state: last,
        });
    }
    Ok(samples)
}

pub(crate) fn rk45_final_state(
    params: &CompassParams,
    initial: PhaseState,
    t0: f64,
    t1: f64,
    settings: &IntegratorSettings,
) -> Result<PhaseState> {
    rk45_advance(params, initial, t0, t1, settings, |_, _| {})
}
