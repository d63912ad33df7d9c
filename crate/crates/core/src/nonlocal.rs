//! Synthesis of the quantum correlation on the compass model: pick small
//! per-side corrections of the hidden variables, bounded by a budget, so
//! that the ensemble correlation `M(a,b)` reproduces `cos 2(a-b)` over an
//! angle grid.
//!
//! Analyser angles in `[0, pi/2]` map linearly onto a narrow window of
//! fixed-field amplitudes inside the chaotic regime, where outcomes are
//! sensitive enough that a bounded offset of one component of the initial
//! condition can select either measurement outcome.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eprb::{correlation, measure_side, Dichotomizer, Ensemble, RunSpec, SideCorrections};
use crate::error::{Error, Result};
use crate::ode::{fmt_f64, IntegratorSettings, Model, PhaseState};

/// Linear map from analyser angles `[0, pi/2]` onto a window of
/// fixed-field amplitudes inside the chaotic regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngleMap {
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Default for AngleMap {
    fn default() -> Self {
        Self {
            x_lo: 0.2290,
            x_hi: 0.2293,
        }
    }
}

impl AngleMap {
    /// Chaos sets in a little above this amplitude; the map must stay
    /// inside the chaotic window.
    pub const CHAOS_ONSET: f64 = 0.2285;

    pub fn new(x_lo: f64, x_hi: f64) -> Result<Self> {
        if !x_lo.is_finite() || !x_hi.is_finite() || x_lo >= x_hi {
            return Err(Error::InvalidParameter(format!(
                "angle map requires x_lo < x_hi, got [{x_lo}, {x_hi}]"
            )));
        }
        if x_lo <= Self::CHAOS_ONSET {
            return Err(Error::InvalidParameter(format!(
                "angle map must lie inside the chaotic window (> {}), got x_lo = {x_lo}",
                Self::CHAOS_ONSET
            )));
        }
        Ok(Self { x_lo, x_hi })
    }
}

/// Map an analyser angle to its fixed-field amplitude.
pub fn angle_to_x(phi: f64, map: &AngleMap) -> Result<f64> {
    if !(0.0..=FRAC_PI_2).contains(&phi) {
        return Err(Error::Domain(format!(
            "analyser angle {phi} lies outside [0, pi/2]"
        )));
    }
    Ok(map.x_lo + phi / FRAC_PI_2 * (map.x_hi - map.x_lo))
}

/// Target and achievable correlation for one ordered angle pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub a: f64,
    pub b: f64,
    /// `cos 2(a-b)`.
    pub target: f64,
    /// Number of members assigned product `+1`.
    pub plus_count: usize,
    /// `(2*plus_count - n) / n`, the nearest achievable mean.
    pub discretized: f64,
}

/// Discretized targets for every ordered pair of grid angles, in row-major
/// grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetTable {
    pub n: usize,
    pub entries: Vec<TargetEntry>,
}

/// Nearest achievable product count for a target mean: the integer `p`
/// minimizing `|(2p - n)/n - c|`, ties toward larger `p`.
pub(crate) fn nearest_plus_count(c: f64, n: usize) -> usize {
    let ideal = n as f64 * (1.0 + c) / 2.0;
    let p = (ideal + 0.5).floor() as i64;
    p.clamp(0, n as i64) as usize
}

/// Build the table of discretized targets over all ordered pairs.
pub fn build_target_table(grid: &[f64], n: usize) -> Result<TargetTable> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter(
            "angle grid must be non-empty".into(),
        ));
    }
    for phi in grid {
        if !(0.0..=FRAC_PI_2).contains(phi) {
            return Err(Error::Domain(format!(
                "grid angle {phi} lies outside [0, pi/2]"
            )));
        }
    }
    let mut entries = Vec::with_capacity(grid.len() * grid.len());
    for &a in grid {
        for &b in grid {
            let target = (2.0 * (a - b)).cos();
            let plus_count = nearest_plus_count(target, n);
            let discretized = (2.0 * plus_count as f64 - n as f64) / n as f64;
            entries.push(TargetEntry {
                a,
                b,
                target,
                plus_count,
                discretized,
            });
        }
    }
    Ok(TargetTable { n, entries })
}

/// Desired products per pair and member. The split of a product onto the
/// two sides is a separate convention: the synthesis leaves side I at its
/// unperturbed outcome (zero correction) and lets side II carry the
/// product, so products of `+1` at equal settings need no correction at
/// all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignAssignment {
    pub table: TargetTable,
    /// `products[pair][member]`, pairs in table order.
    pub products: Vec<Vec<i8>>,
}

/// Choose per-member products realizing each pair's discretized target:
/// the first `plus_count` members get `+1`, the rest `-1`.
pub fn assign_signs(grid: &[f64], n: usize) -> Result<SignAssignment> {
    let table = build_target_table(grid, n)?;
    let products = table
        .entries
        .iter()
        .map(|e| {
            (0..n)
                .map(|m| if m < e.plus_count { 1 } else { -1 })
                .collect()
        })
        .collect();
    Ok(SignAssignment { table, products })
}

/// Which component of the initial condition the search perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbedComponent {
    #[serde(rename = "theta_dot")]
    ThetaDot,
    #[serde(rename = "theta")]
    Theta,
}

impl PerturbedComponent {
    fn offset(&self, magnitude: f64) -> PhaseState {
        match self {
            PerturbedComponent::ThetaDot => PhaseState::new(0.0, magnitude),
            PerturbedComponent::Theta => PhaseState::new(magnitude, 0.0),
        }
    }
}

/// Bound and granularity of the perturbation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationBudget {
    /// Maximum magnitude of the perturbed component.
    pub epsilon: f64,
    /// Number of distinct magnitudes scanned in `(0, epsilon)`.
    pub resolution: usize,
    pub component: PerturbedComponent,
}

impl Default for PerturbationBudget {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            resolution: 40,
            component: PerturbedComponent::ThetaDot,
        }
    }
}

impl PerturbationBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.resolution == 0 {
            return Err(Error::InvalidParameter(
                "resolution must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Scanned magnitude for index `k` in `1..=resolution`: odd multiples
    /// of `epsilon / (2*resolution)`. All magnitudes lie strictly inside
    /// `(0, epsilon)`, and doubling both `epsilon` and `resolution` yields
    /// a refinement containing every magnitude of the original grid.
    fn magnitude(&self, k: usize) -> f64 {
        self.epsilon * (2 * k - 1) as f64 / (2 * self.resolution) as f64
    }
}

/// Smallest-magnitude correction within the budget whose measurement
/// outcome equals `desired`. The unperturbed outcome is evaluated first
/// (returning a zero correction when it already matches); then a symmetric
/// offset grid is scanned in order of increasing magnitude, positive
/// before negative at equal magnitude. Deterministic.
pub fn find_perturbation(
    model: &Model,
    x_setting: f64,
    lambda_l: PhaseState,
    desired: i8,
    d: &Dichotomizer,
    budget: &PerturbationBudget,
    settings: &IntegratorSettings,
) -> Result<PhaseState> {
    budget.validate()?;
    if desired != 1 && desired != -1 {
        return Err(Error::InvalidParameter(format!(
            "desired outcome must be +1 or -1, got {desired}"
        )));
    }
    let base = measure_side(model, x_setting, lambda_l, PhaseState::ZERO, d, settings)?;
    if base == desired {
        return Ok(PhaseState::ZERO);
    }
    for k in 1..=budget.resolution {
        let mag = budget.magnitude(k);
        for sign in [1.0, -1.0] {
            let offset = budget.component.offset(sign * mag);
            if measure_side(model, x_setting, lambda_l, offset, d, settings)? == desired {
                return Ok(offset);
            }
        }
    }
    Err(Error::NoFlipFound {
        x_setting,
        desired,
        epsilon: budget.epsilon,
        t_m: d.t_m,
    })
}

/// The eight-member stock ensemble used by the synthesis defaults:
/// `theta(0) = (94 + 2i) * 1e-3`, `theta_dot(0) = 0` for `i = 0..8`.
pub fn default_local_ensemble() -> Vec<PhaseState> {
    (0..8)
        .map(|i| PhaseState::new((94.0 + 2.0 * i as f64) * 1e-3, 0.0))
        .collect()
}

/// The default synthesis angle grid `{0, pi/8, pi/4, 3pi/8}`.
pub fn default_angle_grid() -> Vec<f64> {
    (0..4).map(|k| k as f64 * std::f64::consts::FRAC_PI_8).collect()
}

/// Inputs of [`reproduce_cos`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisOptions {
    pub map: AngleMap,
    pub grid: Vec<f64>,
    pub lambda_l_list: Vec<PhaseState>,
    pub dichotomizer: Dichotomizer,
    pub budget: PerturbationBudget,
    /// Upper bound of the measuring-time escalation (doubling from the
    /// dichotomizer's `t_m` when a pair has unflippable members).
    pub t_m_cap: f64,
    pub integrator: IntegratorSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            map: AngleMap::default(),
            grid: default_angle_grid(),
            lambda_l_list: default_local_ensemble(),
            dichotomizer: Dichotomizer::default(),
            budget: PerturbationBudget::default(),
            t_m_cap: 1600.0,
            integrator: IntegratorSettings::default(),
        }
    }
}

/// Measurement side of a failed search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
}

/// A (member, side) search that found no flip within the budget at the
/// pair's final measuring time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailedSearch {
    pub member: usize,
    pub side: Side,
    pub desired: i8,
}

/// Synthesis outcome for one ordered angle pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairReport {
    pub a: f64,
    pub b: f64,
    pub x_i: f64,
    pub x_ii: f64,
    pub target: f64,
    pub discretized: f64,
    /// Correlation actually measured with the synthesized corrections.
    pub m: f64,
    /// `|m - target|`.
    pub abs_err: f64,
    /// Measuring time after escalation.
    pub t_m: f64,
    pub corrections: Vec<SideCorrections>,
    pub failures: Vec<FailedSearch>,
}

/// Full synthesis report over the angle grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisReport {
    pub n: usize,
    pub epsilon: f64,
    /// Smallest achievable `|M - target|` granularity, `1/n`.
    pub discretization_floor: f64,
    pub pairs: Vec<PairReport>,
    /// Largest perturbed-component magnitude actually used.
    pub max_abs_correction: f64,
    pub failure_count: usize,
}

impl SynthesisReport {
    pub fn max_abs_err(&self) -> f64 {
        self.pairs.iter().map(|p| p.abs_err).fold(0.0, f64::max)
    }

    /// CSV export: `a,b,target_cos,discretized,M,abs_err`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "a,b,target_cos,discretized,M,abs_err")?;
        for p in &self.pairs {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(p.a),
                fmt_f64(p.b),
                fmt_f64(p.target),
                fmt_f64(p.discretized),
                fmt_f64(p.m),
                fmt_f64(p.abs_err)
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct SearchKey {
    x: u64,
    theta: u64,
    theta_dot: u64,
    /// Desired outcome for flip searches; 0 marks an unperturbed
    /// base-outcome measurement.
    desired: i8,
    t_m: u64,
}

/// Synthesize corrections reproducing `cos 2(a-b)` over the grid: build the
/// discretized target table, assign per-member products, and realize each
/// product with a bounded correction. Side I keeps its unperturbed outcome
/// (zero correction); side II searches for the offset whose outcome makes
/// the product come out as assigned, so products of `+1` at equal settings
/// need no correction at all. When any member of a pair cannot be flipped,
/// the pair's measuring time doubles (all members re-evaluated at the new
/// time) up to `t_m_cap`; remaining failures are collected in the report
/// without aborting other pairs. Each pair's correlation is then measured
/// with the corrections applied.
pub fn reproduce_cos(model: &Model, opts: &SynthesisOptions) -> Result<SynthesisReport> {
    opts.budget.validate()?;
    opts.integrator.validate()?;
    if opts.lambda_l_list.is_empty() {
        return Err(Error::InvalidParameter(
            "lambda_l_list must be non-empty".into(),
        ));
    }
    if opts.t_m_cap.is_nan() || opts.t_m_cap < opts.dichotomizer.t_m {
        return Err(Error::InvalidParameter(
            "t_m_cap must be at least the dichotomizer's t_m".into(),
        ));
    }
    let n = opts.lambda_l_list.len();
    let assignment = assign_signs(&opts.grid, n)?;

    // Memoized unperturbed outcomes and flip searches, keyed by (setting,
    // initial condition, [desired outcome,] measuring time). Pairs share
    // analyser settings, so most evaluations repeat across pairs.
    let mut base_memo: HashMap<SearchKey, i8> = HashMap::new();
    let mut search_memo: HashMap<SearchKey, std::result::Result<PhaseState, ()>> =
        HashMap::new();
    let key_of = |x: f64, lambda: PhaseState, desired: i8, t_m: f64| SearchKey {
        x: x.to_bits(),
        theta: lambda.theta.to_bits(),
        theta_dot: lambda.theta_dot.to_bits(),
        desired,
        t_m: t_m.to_bits(),
    };

    let mut pairs = Vec::with_capacity(assignment.table.entries.len());
    let mut max_abs_correction = 0.0f64;
    let mut failure_count = 0usize;

    for (pair_idx, entry) in assignment.table.entries.iter().enumerate() {
        let x_i = angle_to_x(entry.a, &opts.map)?;
        let x_ii = angle_to_x(entry.b, &opts.map)?;
        let products = &assignment.products[pair_idx];

        let mut t_m = opts.dichotomizer.t_m;
        let (corrections, failures, t_m_final) = loop {
            let d = Dichotomizer::new(opts.dichotomizer.delta, t_m)?;

            // Phase 1: unperturbed side-I outcomes.
            let mut missing: Vec<(SearchKey, PhaseState)> = Vec::new();
            for lambda in &opts.lambda_l_list {
                let k = key_of(x_i, *lambda, 0, t_m);
                if !base_memo.contains_key(&k) && !missing.iter().any(|(mk, _)| *mk == k) {
                    missing.push((k, *lambda));
                }
            }
            let bases: Vec<(SearchKey, i8)> = missing
                .par_iter()
                .map(|(k, lambda)| {
                    let a = measure_side(model, x_i, *lambda, PhaseState::ZERO, &d, &opts.integrator)?;
                    Ok((*k, a))
                })
                .collect::<Result<Vec<_>>>()?;
            base_memo.extend(bases);

            // Phase 2: side-II searches for the product-matching outcome.
            let mut missing: Vec<(SearchKey, (PhaseState, i8))> = Vec::new();
            for (m, lambda) in opts.lambda_l_list.iter().enumerate() {
                let base_i = base_memo[&key_of(x_i, *lambda, 0, t_m)];
                let desired_ii = products[m] * base_i;
                let k = key_of(x_ii, *lambda, desired_ii, t_m);
                if !search_memo.contains_key(&k) && !missing.iter().any(|(mk, _)| *mk == k) {
                    missing.push((k, (*lambda, desired_ii)));
                }
            }
            let computed: Vec<(SearchKey, std::result::Result<PhaseState, ()>)> = missing
                .par_iter()
                .map(|(k, (lambda, desired))| {
                    let r = find_perturbation(
                        model,
                        x_ii,
                        *lambda,
                        *desired,
                        &d,
                        &opts.budget,
                        &opts.integrator,
                    );
                    match r {
                        Ok(offset) => Ok((*k, Ok(offset))),
                        Err(Error::NoFlipFound { .. }) => Ok((*k, Err(()))),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            search_memo.extend(computed);

            let mut corrections = Vec::with_capacity(n);
            let mut failures = Vec::new();
            for (m, lambda) in opts.lambda_l_list.iter().enumerate() {
                let base_i = base_memo[&key_of(x_i, *lambda, 0, t_m)];
                let desired_ii = products[m] * base_i;
                let side_ii = search_memo[&key_of(x_ii, *lambda, desired_ii, t_m)];
                if side_ii.is_err() {
                    failures.push(FailedSearch {
                        member: m,
                        side: Side::II,
                        desired: desired_ii,
                    });
                }
                corrections.push(SideCorrections {
                    side_i: PhaseState::ZERO,
                    side_ii: side_ii.unwrap_or(PhaseState::ZERO),
                });
            }
            if failures.is_empty() || t_m * 2.0 > opts.t_m_cap {
                break (corrections, failures, t_m);
            }
            t_m *= 2.0;
        };

        for c in &corrections {
            for s in [c.side_i, c.side_ii] {
                max_abs_correction = max_abs_correction
                    .max(s.theta.abs())
                    .max(s.theta_dot.abs());
            }
        }
        failure_count += failures.len();

        let run = RunSpec::new(
            x_i,
            x_ii,
            Ensemble::new(opts.lambda_l_list.clone())?,
            Some(corrections.clone()),
        )?;
        let d_final = Dichotomizer::new(opts.dichotomizer.delta, t_m_final)?;
        let measured = correlation(model, &run, &d_final, &opts.integrator)?;

        pairs.push(PairReport {
            a: entry.a,
            b: entry.b,
            x_i,
            x_ii,
            target: entry.target,
            discretized: entry.discretized,
            m: measured.m,
            abs_err: (measured.m - entry.target).abs(),
            t_m: t_m_final,
            corrections,
            failures,
        });
    }

    Ok(SynthesisReport {
        n,
        epsilon: opts.budget.epsilon,
        discretization_floor: 1.0 / n as f64,
        pairs,
        max_abs_correction,
        failure_count,
    })
}
