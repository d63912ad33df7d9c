//! Regular-vs-chaotic characterization of the driven compass: stroboscopic
//! sections, bifurcation scans over the fixed-field amplitude, largest
//! Lyapunov exponents, and pairwise divergence curves.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{
    advance_fixed, rk45_final_state, span_steps, wrap_angle, CompassParams, IntegrationMethod,
    IntegratorSettings, PhaseState,
};

/// Benettin two-trajectory estimator settings. Times are in dimensionless
/// units; the drive period is `2*pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSettings {
    /// Initial and renormalized separation magnitude (radians).
    pub d0: f64,
    /// Time between renormalizations.
    pub renorm_interval: f64,
    /// Discarded initial time.
    pub transient: f64,
    /// Total simulated time, transient included; must exceed `transient`.
    pub total: f64,
}

impl Default for LyapunovSettings {
    fn default() -> Self {
        Self {
            d0: 1e-8,
            renorm_interval: TAU,
            transient: 200.0 * TAU,
            total: 2000.0 * TAU,
        }
    }
}

impl LyapunovSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d0 > 0.0
            && self.renorm_interval > 0.0
            && self.transient > 0.0
            && self.total > self.transient;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "Lyapunov settings must be positive with total > transient".into(),
            ))
        }
    }
}

/// Stroboscopic samples per grid value of the fixed-field amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BifurcationPoint {
    pub x: f64,
    /// Wrapped angles sampled once per drive period after transient discard.
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BifurcationDataset {
    pub points: Vec<BifurcationPoint>,
}

impl BifurcationDataset {
    /// CSV export, one row per kept sample: `x,theta_wrapped`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "x,theta_wrapped")?;
        for p in &self.points {
            for th in &p.thetas {
                writeln!(w, "{},{}", crate::ode::fmt_f64(p.x), crate::ode::fmt_f64(*th))?;
            }
        }
        Ok(())
    }
}

/// Advance one drive period starting at period index `k`, hitting the
/// period boundary exactly by adjusting the substep to divide `2*pi`.
fn advance_period(
    params: &CompassParams,
    s: PhaseState,
    period_index: u64,
    settings: &IntegratorSettings,
) -> Result<PhaseState> {
    let t0 = period_index as f64 * TAU;
    match settings.method {
        IntegrationMethod::Rk4Fixed => {
            let (n, h) = span_steps(TAU, settings.step);
            advance_fixed(params, s, t0, h, n)
        }
        IntegrationMethod::Rk45Adaptive => rk45_final_state(params, s, t0, t0 + TAU, settings),
    }
}

/// States sampled once per drive period, `t = 2*pi*k` for
/// `k = n_transient+1 ..= n_transient+n_keep`.
pub fn stroboscopic_section(
    params: &CompassParams,
    initial: PhaseState,
    n_transient: u64,
    n_keep: u64,
    settings: &IntegratorSettings,
) -> Result<Vec<PhaseState>> {
    settings.validate()?;
    if n_keep == 0 {
        return Err(Error::InvalidParameter("n_keep must be at least 1".into()));
    }
    let mut s = initial;
    let mut kept = Vec::with_capacity(n_keep as usize);
    for k in 0..n_transient + n_keep {
        s = advance_period(params, s, k, settings)?;
        if k >= n_transient {
            kept.push(s);
        }
    }
    Ok(kept)
}

/// Largest Lyapunov exponent via Benettin renormalization of a companion
/// trajectory: a second copy offset by `d0` in angle is evolved alongside
/// the reference, its separation is rescaled to `d0` every
/// `renorm_interval`, and log-expansion rates are averaged after the
/// transient. Deterministic.
pub fn largest_lyapunov(
    params: &CompassParams,
    initial: PhaseState,
    lyap: &LyapunovSettings,
    settings: &IntegratorSettings,
) -> Result<f64> {
    settings.validate()?;
    lyap.validate()?;
    let interval = lyap.renorm_interval;
    let n_total = (lyap.total / interval).round().max(1.0) as u64;
    let n_transient = (lyap.transient / interval).round() as u64;
    if n_transient >= n_total {
        return Err(Error::InvalidParameter(
            "transient leaves no averaging intervals".into(),
        ));
    }

    let (n_sub, h) = span_steps(interval, settings.step);
    let mut reference = initial;
    let mut companion = PhaseState::new(initial.theta + lyap.d0, initial.theta_dot);
    let mut log_sum = 0.0;
    for k in 0..n_total {
        let t0 = k as f64 * interval;
        match settings.method {
            IntegrationMethod::Rk4Fixed => {
                reference = advance_fixed(params, reference, t0, h, n_sub)?;
                companion = advance_fixed(params, companion, t0, h, n_sub)?;
            }
            IntegrationMethod::Rk45Adaptive => {
                reference = rk45_final_state(params, reference, t0, t0 + interval, settings)?;
                companion = rk45_final_state(params, companion, t0, t0 + interval, settings)?;
            }
        }
        let dt = companion.theta - reference.theta;
        let dv = companion.theta_dot - reference.theta_dot;
        let d = (dt * dt + dv * dv).sqrt();
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::NonFiniteState {
                t: (k + 1) as f64 * interval,
            });
        }
        if k >= n_transient {
            log_sum += (d / lyap.d0).ln();
        }
        let scale = lyap.d0 / d;
        companion = PhaseState::new(reference.theta + scale * dt, reference.theta_dot + scale * dv);
    }
    Ok(log_sum / ((n_total - n_transient) as f64 * interval))
}

/// Wrapped angular separation `|wrap(theta_a - theta_b)|` of two
/// trajectories, sampled at `t = 0`, once per drive period, and at the
/// horizon itself.
pub fn divergence_curve(
    params: &CompassParams,
    init_a: PhaseState,
    init_b: PhaseState,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<Vec<(f64, f64)>> {
    settings.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let sep = |a: &PhaseState, b: &PhaseState| wrap_angle(a.theta - b.theta).abs();
    let mut a = init_a;
    let mut b = init_b;
    let mut curve = vec![(0.0, sep(&a, &b))];
    let full_periods = (horizon / TAU).floor() as u64;
    for k in 0..full_periods {
        a = advance_period(params, a, k, settings)?;
        b = advance_period(params, b, k, settings)?;
        curve.push(((k + 1) as f64 * TAU, sep(&a, &b)));
    }
    let t_last = full_periods as f64 * TAU;
    if t_last < horizon {
        let span = horizon - t_last;
        match settings.method {
            IntegrationMethod::Rk4Fixed => {
                let (n, h) = span_steps(span, settings.step);
                a = advance_fixed(params, a, t_last, h, n)?;
                b = advance_fixed(params, b, t_last, h, n)?;
            }
            IntegrationMethod::Rk45Adaptive => {
                a = rk45_final_state(params, a, t_last, horizon, settings)?;
                b = rk45_final_state(params, b, t_last, horizon, settings)?;
            }
        }
        curve.push((horizon, sep(&a, &b)));
    }
    Ok(curve)
}

fn check_scan_interval(x_lo: f64, x_hi: f64, n_x: usize) -> Result<()> {
    if !x_lo.is_finite() || !x_hi.is_finite() || x_lo >= x_hi {
        return Err(Error::InvalidParameter(format!(
            "scan interval must have positive width, got [{x_lo}, {x_hi}]"
        )));
    }
    if n_x < 2 {
        return Err(Error::InvalidParameter("n_x must be at least 2".into()));
    }
    Ok(())
}

fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Stroboscopic section per grid point over `x in [x_lo, x_hi]`. The model
/// constants (friction, drive) come from `base`; its `x` is replaced by
/// each grid value. Grid points are evaluated in parallel and assembled in
/// ascending-x order, so results are schedule-independent.
#[allow(clippy::too_many_arguments)]
pub fn bifurcation_scan(
    base: &CompassParams,
    x_lo: f64,
    x_hi: f64,
    n_x: usize,
    initial: PhaseState,
    n_transient: u64,
    n_keep: u64,
    settings: &IntegratorSettings,
) -> Result<BifurcationDataset> {
    check_scan_interval(x_lo, x_hi, n_x)?;
    let points = linear_grid(x_lo, x_hi, n_x)
        .into_par_iter()
        .map(|x| {
            let params = CompassParams::new(base.alpha, base.p, x)?;
            let states = stroboscopic_section(&params, initial, n_transient, n_keep, settings)?;
            Ok(BifurcationPoint {
                x,
                thetas: states.iter().map(PhaseState::wrapped_theta).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BifurcationDataset { points })
}

/// Largest Lyapunov exponent per grid point; same conventions as
/// [`bifurcation_scan`]. Returns `(x, lambda_max)` pairs in ascending-x
/// order.
pub fn lyapunov_scan(
    base: &CompassParams,
    x_lo: f64,
    x_hi: f64,
    n_x: usize,
    initial: PhaseState,
    lyap: &LyapunovSettings,
    settings: &IntegratorSettings,
) -> Result<Vec<(f64, f64)>> {
    check_scan_interval(x_lo, x_hi, n_x)?;
    linear_grid(x_lo, x_hi, n_x)
        .into_par_iter()
        .map(|x| {
            let params = CompassParams::new(base.alpha, base.p, x)?;
            let lambda = largest_lyapunov(&params, initial, lyap, settings)?;
            Ok((x, lambda))
        })
        .collect()
}

/// CSV export of a Lyapunov scan: `x,lambda_max`.
pub fn write_lyapunov_csv<W: std::io::Write>(
    rows: &[(f64, f64)],
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "x,lambda_max")?;
    for (x, l) in rows {
        writeln!(w, "{},{}", crate::ode::fmt_f64(*x), crate::ode::fmt_f64(*l))?;
    }
    Ok(())
}

/// Number of clusters among `values` when values closer than `tol` to
/// their sorted neighbour belong to the same cluster. Used to count
/// distinct stroboscopic orbit points.
pub fn distinct_count(values: &[f64], tol: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    1 + sorted.windows(2).filter(|w| w[1] - w[0] > tol).count()
}
