//! The EPRB analogue on pairs of driven compasses: dichotomic measurement,
//! ensemble correlations, the Bell/CHSH sum, four-run experiments with
//! optional per-run hidden-variable drift, and a random-switching mode.
//!
//! Two identical compasses share the same initial condition (the hidden
//! variable) and differ only through their analyser settings `x` and,
//! optionally, small per-side corrections of the hidden variable. Each side
//! reports `+1` when the wrapped needle angle at the measuring time lies
//! strictly within the threshold, else `-1`.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{
    fmt_f64, state_at, step_count, wrap_angle, IntegrationMethod, IntegratorSettings, Model,
    PhaseState,
};

/// The hidden variable of the model: an initial condition of the compass
/// equation of motion.
pub type HiddenVar = PhaseState;

/// Measurement rule: threshold and measuring time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dichotomizer {
    /// Threshold in radians.
    pub delta: f64,
    /// Measuring time. In random-switching mode this is the evolution
    /// interval between impingement and detection, with the drive phase
    /// reset to zero at impingement.
    pub t_m: f64,
}

impl Dichotomizer {
    pub fn new(delta: f64, t_m: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if !(t_m.is_finite() && t_m > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_m must be positive, got {t_m}"
            )));
        }
        Ok(Self { delta, t_m })
    }
}

impl Default for Dichotomizer {
    fn default() -> Self {
        Self {
            delta: 0.3,
            t_m: 100.0,
        }
    }
}

/// Equal-weight finite ensemble of local hidden variables; represents the
/// distribution `(1/N) * sum_j delta(lambda - lambda_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub members: Vec<HiddenVar>,
}

impl Ensemble {
    pub fn new(members: Vec<HiddenVar>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter(
                "ensemble must have at least one member".into(),
            ));
        }
        if members.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter(
                "ensemble members must be finite".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn single(member: HiddenVar) -> Self {
        Self {
            members: vec![member],
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Per-member corrections applied to the hidden variable before each side's
/// evolution; they need not be the same for the two sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideCorrections {
    pub side_i: PhaseState,
    pub side_ii: PhaseState,
}

impl SideCorrections {
    pub const ZERO: SideCorrections = SideCorrections {
        side_i: PhaseState::ZERO,
        side_ii: PhaseState::ZERO,
    };
}

/// One correlation run: two analyser settings, the shared ensemble, and
/// optional per-member corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub setting_i: f64,
    pub setting_ii: f64,
    pub ensemble: Ensemble,
    /// Non-local per-member corrections; `None` means zero throughout.
    pub corrections: Option<Vec<SideCorrections>>,
}

impl RunSpec {
    pub fn new(
        setting_i: f64,
        setting_ii: f64,
        ensemble: Ensemble,
        corrections: Option<Vec<SideCorrections>>,
    ) -> Result<Self> {
        for x in [setting_i, setting_ii] {
            if !(0.0..1.0).contains(&x) {
                return Err(Error::InvalidParameter(format!(
                    "analyser setting must lie in [0, 1), got {x}"
                )));
            }
        }
        if let Some(c) = &corrections {
            if c.len() != ensemble.len() {
                return Err(Error::InvalidParameter(format!(
                    "corrections length {} does not match ensemble size {}",
                    c.len(),
                    ensemble.len()
                )));
            }
            if c.iter()
                .any(|sc| !sc.side_i.is_finite() || !sc.side_ii.is_finite())
            {
                return Err(Error::InvalidParameter(
                    "corrections must be finite".into(),
                ));
            }
        }
        Ok(Self {
            setting_i,
            setting_ii,
            ensemble,
            corrections,
        })
    }

    fn correction(&self, member: usize) -> SideCorrections {
        self.corrections
            .as_ref()
            .map(|c| c[member])
            .unwrap_or(SideCorrections::ZERO)
    }
}

/// The four-run experiment measuring the Bell sum for settings
/// `(a, b), (a, b'), (a', b), (a', b')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub model: Model,
    pub a: f64,
    pub b: f64,
    pub a_prime: f64,
    pub b_prime: f64,
    pub runs: [RunSpec; 4],
    pub dichotomizer: Dichotomizer,
    pub integrator: IntegratorSettings,
}

impl ExperimentPlan {
    pub fn new(
        model: Model,
        (a, b, a_prime, b_prime): (f64, f64, f64, f64),
        runs: [RunSpec; 4],
        dichotomizer: Dichotomizer,
        integrator: IntegratorSettings,
    ) -> Result<Self> {
        let expected = [(a, b), (a, b_prime), (a_prime, b), (a_prime, b_prime)];
        for (run, (si, sii)) in runs.iter().zip(expected) {
            if run.setting_i != si || run.setting_ii != sii {
                return Err(Error::InvalidParameter(format!(
                    "run settings ({}, {}) do not match the pair labels ({si}, {sii})",
                    run.setting_i, run.setting_ii
                )));
            }
        }
        integrator.validate()?;
        Ok(Self {
            model,
            a,
            b,
            a_prime,
            b_prime,
            runs,
            dichotomizer,
            integrator,
        })
    }

    /// All four runs use the same ensemble with zero corrections: the
    /// textbook local experiment.
    pub fn shared_ensemble(
        model: Model,
        settings: (f64, f64, f64, f64),
        ensemble: Ensemble,
        dichotomizer: Dichotomizer,
        integrator: IntegratorSettings,
    ) -> Result<Self> {
        let (a, b, a_prime, b_prime) = settings;
        let runs = [
            RunSpec::new(a, b, ensemble.clone(), None)?,
            RunSpec::new(a, b_prime, ensemble.clone(), None)?,
            RunSpec::new(a_prime, b, ensemble.clone(), None)?,
            RunSpec::new(a_prime, b_prime, ensemble, None)?,
        ];
        Self::new(model, settings, runs, dichotomizer, integrator)
    }

    /// Four single-member runs whose hidden variables may drift between
    /// runs.
    pub fn drifting_single(
        model: Model,
        settings: (f64, f64, f64, f64),
        lambdas: [HiddenVar; 4],
        dichotomizer: Dichotomizer,
        integrator: IntegratorSettings,
    ) -> Result<Self> {
        let (a, b, a_prime, b_prime) = settings;
        let runs = [
            RunSpec::new(a, b, Ensemble::single(lambdas[0]), None)?,
            RunSpec::new(a, b_prime, Ensemble::single(lambdas[1]), None)?,
            RunSpec::new(a_prime, b, Ensemble::single(lambdas[2]), None)?,
            RunSpec::new(a_prime, b_prime, Ensemble::single(lambdas[3]), None)?,
        ];
        Self::new(model, settings, runs, dichotomizer, integrator)
    }

    pub fn with_t_m(&self, t_m: f64) -> Result<Self> {
        let mut plan = self.clone();
        plan.dichotomizer = Dichotomizer::new(self.dichotomizer.delta, t_m)?;
        Ok(plan)
    }
}

/// Per-member measurement record of one correlation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRecord {
    pub lambda_l: PhaseState,
    pub lambda_nl_i: PhaseState,
    pub lambda_nl_ii: PhaseState,
    pub outcome_i: i8,
    pub outcome_ii: i8,
    pub product: i8,
}

/// Ensemble mean of outcome products, with the per-member records that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationResult {
    pub setting_i: f64,
    pub setting_ii: f64,
    pub m: f64,
    pub records: Vec<MemberRecord>,
}

/// The four correlations and the Bell sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BellResult {
    pub m1: CorrelationResult,
    pub m2: CorrelationResult,
    pub m3: CorrelationResult,
    pub m4: CorrelationResult,
    pub s: f64,
}

impl BellResult {
    pub fn correlations(&self) -> [&CorrelationResult; 4] {
        [&self.m1, &self.m2, &self.m3, &self.m4]
    }

    /// CSV summary: `run,setting_I,setting_II,M` rows plus a trailing `S`
    /// line.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "run,setting_I,setting_II,M")?;
        for (i, c) in self.correlations().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                i + 1,
                fmt_f64(c.setting_i),
                fmt_f64(c.setting_ii),
                fmt_f64(c.m)
            )?;
        }
        writeln!(w, "S,{}", fmt_f64(self.s))
    }
}

/// `+1` iff the wrapped angle lies strictly within the threshold, else
/// `-1`. The boundary maps to `-1`.
pub fn dichotomize(theta_wrapped: f64, delta: f64) -> i8 {
    if theta_wrapped.abs() < delta {
        1
    } else {
        -1
    }
}

/// Evolve one side from `lambda_l + lambda_nl` under setting `x_setting`
/// and dichotomize the wrapped angle at the measuring time.
pub fn measure_side(
    model: &Model,
    x_setting: f64,
    lambda_l: PhaseState,
    lambda_nl: PhaseState,
    d: &Dichotomizer,
    settings: &IntegratorSettings,
) -> Result<i8> {
    let params = model.params(x_setting)?;
    let state = state_at(&params, lambda_l.offset(lambda_nl), d.t_m, settings)?;
    Ok(dichotomize(state.wrapped_theta(), d.delta))
}

/// Ensemble correlation `M = (1/N) * sum_i A_I * A_II`. Members are
/// evaluated independently (in parallel) and assembled in member order, so
/// the result is schedule-independent.
pub fn correlation(
    model: &Model,
    run: &RunSpec,
    d: &Dichotomizer,
    settings: &IntegratorSettings,
) -> Result<CorrelationResult> {
    let records: Vec<MemberRecord> = run
        .ensemble
        .members
        .par_iter()
        .enumerate()
        .map(|(idx, lambda_l)| {
            let corr = run.correction(idx);
            let outcome_i =
                measure_side(model, run.setting_i, *lambda_l, corr.side_i, d, settings)?;
            let outcome_ii =
                measure_side(model, run.setting_ii, *lambda_l, corr.side_ii, d, settings)?;
            Ok(MemberRecord {
                lambda_l: *lambda_l,
                lambda_nl_i: corr.side_i,
                lambda_nl_ii: corr.side_ii,
                outcome_i,
                outcome_ii,
                product: outcome_i * outcome_ii,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationResult {
        setting_i: run.setting_i,
        setting_ii: run.setting_ii,
        m: mean_of_products(records.iter().map(|r| r.product)),
        records,
    })
}

/// Mean of `+/-1` products, summed in member order.
pub(crate) fn mean_of_products<I: ExactSizeIterator<Item = i8>>(products: I) -> f64 {
    let n = products.len();
    let sum: i64 = products.map(i64::from).sum();
    sum as f64 / n as f64
}

/// The Bell sum `m1 - m2 + m3 + m4`.
pub fn bell_s(m1: f64, m2: f64, m3: f64, m4: f64) -> Result<f64> {
    for m in [m1, m2, m3, m4] {
        if !(m.is_finite() && m.abs() <= 1.0) {
            return Err(Error::Domain(format!(
                "correlation {m} lies outside [-1, 1]"
            )));
        }
    }
    Ok(m1 - m2 + m3 + m4)
}

/// Evaluate the four correlations of a plan and assemble the Bell sum.
pub fn run_plan(plan: &ExperimentPlan) -> Result<BellResult> {
    let mut results = Vec::with_capacity(4);
    for run in &plan.runs {
        results.push(correlation(
            &plan.model,
            run,
            &plan.dichotomizer,
            &plan.integrator,
        )?);
    }
    let m4 = results.pop().unwrap();
    let m3 = results.pop().unwrap();
    let m2 = results.pop().unwrap();
    let m1 = results.pop().unwrap();
    let s = bell_s(m1.m, m2.m, m3.m, m4.m)?;
    Ok(BellResult { m1, m2, m3, m4, s })
}

/// A measuring time found by [`scan_measuring_times`], with the full
/// experiment evaluated there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanHit {
    pub t_m: f64,
    pub result: BellResult,
}

/// Evaluate the plan at every candidate measuring time and return the
/// first where `|S| >= target_abs_s`. Distinct trajectories are integrated
/// once up to the largest candidate, recording the wrapped angle at each
/// candidate's step index, so the scan costs one pass per distinct
/// `(setting, initial condition)` pair instead of one integration per
/// candidate. The returned result is re-evaluated through [`run_plan`] and
/// is bit-identical to calling it directly with the found `t_m`.
///
/// Fixed-step integration only; the adaptive cross-check method is not
/// supported here.
pub fn scan_measuring_times(
    plan: &ExperimentPlan,
    candidates: &[f64],
    target_abs_s: f64,
) -> Result<Option<ScanHit>> {
    if plan.integrator.method != IntegrationMethod::Rk4Fixed {
        return Err(Error::Domain(
            "measuring-time scan requires the fixed-step method".into(),
        ));
    }
    plan.integrator.validate()?;
    if candidates.is_empty() {
        return Ok(None);
    }
    if candidates.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidParameter(
            "measuring-time candidates must be positive".into(),
        ));
    }
    let h = plan.integrator.step;

    // Step index per candidate, mirroring state_at's step count exactly.
    let steps: Vec<u64> = candidates.iter().map(|c| step_count(*c, h)).collect();
    let mut wanted: Vec<u64> = steps.clone();
    wanted.sort_unstable();
    wanted.dedup();
    let max_step = *wanted.last().unwrap();

    // Distinct (setting, initial) trajectories across all runs and sides.
    #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
    struct TrajKey {
        x: u64,
        theta: u64,
        theta_dot: u64,
    }
    let key_of = |x: f64, s: PhaseState| TrajKey {
        x: x.to_bits(),
        theta: s.theta.to_bits(),
        theta_dot: s.theta_dot.to_bits(),
    };
    let mut tasks: Vec<(TrajKey, f64, PhaseState)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut run_keys: Vec<Vec<(TrajKey, TrajKey)>> = Vec::with_capacity(4);
    for run in &plan.runs {
        let mut member_keys = Vec::with_capacity(run.ensemble.len());
        for (idx, lambda_l) in run.ensemble.members.iter().enumerate() {
            let corr = run.correction(idx);
            let mut side = |x: f64, init: PhaseState| {
                let k = key_of(x, init);
                if seen.insert(k) {
                    tasks.push((k, x, init));
                }
                k
            };
            let ki = side(run.setting_i, lambda_l.offset(corr.side_i));
            let kii = side(run.setting_ii, lambda_l.offset(corr.side_ii));
            member_keys.push((ki, kii));
        }
        run_keys.push(member_keys);
    }

    // One pass per distinct trajectory, recording wrapped theta at the
    // wanted step indices. The stepping matches state_at bit for bit.
    let recorded: Vec<(TrajKey, Vec<f64>)> = tasks
        .par_iter()
        .map(|(key, x, init)| {
            let params = plan.model.params(*x)?;
            let mut s = *init;
            let mut row = Vec::with_capacity(wanted.len());
            let mut next = 0usize;
            let mut step_idx: u64 = 0;
            while step_idx < max_step {
                s = crate::ode::advance_fixed(&params, s, step_idx as f64 * h, h, 1)?;
                step_idx += 1;
                if wanted[next] == step_idx {
                    row.push(wrap_angle(s.theta));
                    next += 1;
                    if next == wanted.len() {
                        break;
                    }
                }
            }
            Ok((*key, row))
        })
        .collect::<Result<Vec<_>>>()?;
    let theta_at: HashMap<TrajKey, Vec<f64>> = recorded.into_iter().collect();

    for (&candidate, &step) in candidates.iter().zip(&steps) {
        let slot = wanted.binary_search(&step).expect("step was recorded");
        let mut ms = [0.0_f64; 4];
        for (run_idx, member_keys) in run_keys.iter().enumerate() {
            let products = member_keys.iter().map(|(ki, kii)| {
                let a = dichotomize(theta_at[ki][slot], plan.dichotomizer.delta);
                let b = dichotomize(theta_at[kii][slot], plan.dichotomizer.delta);
                a * b
            });
            ms[run_idx] = mean_of_products(products);
        }
        let s = ms[0] - ms[1] + ms[2] + ms[3];
        if s.abs() >= target_abs_s - 1e-12 {
            let hit_plan = plan.with_t_m(candidate)?;
            let result = run_plan(&hit_plan)?;
            return Ok(Some(ScanHit {
                t_m: candidate,
                result,
            }));
        }
    }
    Ok(None)
}

/// Evenly spaced measuring-time candidates `start, start+spacing, ..., <=
/// end`.
pub fn time_grid(start: f64, end: f64, spacing: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !spacing.is_finite() || spacing <= 0.0 || !start.is_finite() || end < start {
        return out;
    }
    let n = ((end - start) / spacing).floor() as u64;
    for k in 0..=n {
        out.push(start + k as f64 * spacing);
    }
    out
}

/// Random-switching menu: two candidate settings per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingMenu {
    pub side_i: [f64; 2],
    pub side_ii: [f64; 2],
}

/// Outcomes of one distinct (setting combination, member) cell in
/// random-switching mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingRecord {
    pub choice_i: usize,
    pub choice_ii: usize,
    pub member: usize,
    pub lambda_l: PhaseState,
    pub lambda_nl_i: PhaseState,
    pub lambda_nl_ii: PhaseState,
    pub outcome_i: i8,
    pub outcome_ii: i8,
}

/// Conditional correlation estimates per setting combination, and the Bell
/// sum assembled from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingResult {
    pub menu: SwitchingMenu,
    pub n_pairs: u64,
    pub seed: u64,
    /// Pairs received per combination, indexed `[choice_i][choice_ii]`.
    pub counts: [[u64; 2]; 2],
    /// Conditional means per combination, indexed `[choice_i][choice_ii]`.
    pub m: [[f64; 2]; 2],
    pub s: f64,
    pub records: Vec<SwitchingRecord>,
}

impl SwitchingResult {
    /// CSV summary in the static-run format plus the trailing `S` line.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "run,setting_I,setting_II,M")?;
        let order = [(0usize, 0usize), (0, 1), (1, 0), (1, 1)];
        for (run, (i, j)) in order.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                run + 1,
                fmt_f64(self.menu.side_i[*i]),
                fmt_f64(self.menu.side_ii[*j]),
                fmt_f64(self.m[*i][*j])
            )?;
        }
        writeln!(w, "S,{}", fmt_f64(self.s))
    }
}

/// Random-switching experiment: for each emitted pair the two analyser
/// settings are drawn uniformly (seeded ChaCha8, one low bit per side), the
/// hidden variable is the cycled ensemble member plus the rule's
/// setting-dependent correction, and products accumulate per combination.
///
/// The correction rule receives `(choice_i, choice_ii, member)` and must be
/// a pure function; outcomes are memoized per distinct cell.
#[allow(clippy::too_many_arguments)]
pub fn run_random_switching<F>(
    model: &Model,
    menu: &SwitchingMenu,
    ensemble: &Ensemble,
    n_pairs: u64,
    seed: u64,
    corrections_rule: F,
    d: &Dichotomizer,
    settings: &IntegratorSettings,
) -> Result<SwitchingResult>
where
    F: Fn(usize, usize, usize) -> SideCorrections,
{
    if n_pairs == 0 {
        return Err(Error::InvalidParameter(
            "n_pairs must be at least 1".into(),
        ));
    }
    for x in menu.side_i.iter().chain(menu.side_ii.iter()) {
        if !(0.0..1.0).contains(x) {
            return Err(Error::InvalidParameter(format!(
                "analyser setting must lie in [0, 1), got {x}"
            )));
        }
    }
    let n_members = ensemble.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell: HashMap<(usize, usize, usize), (i8, i8)> = HashMap::new();
    let mut counts = [[0u64; 2]; 2];
    let mut sums = [[0i64; 2]; 2];

    for pair in 0..n_pairs {
        let member = (pair % n_members as u64) as usize;
        let choice_i = (rng.next_u32() & 1) as usize;
        let choice_ii = (rng.next_u32() & 1) as usize;
        let key = (choice_i, choice_ii, member);
        let (a, b) = match cell.get(&key) {
            Some(v) => *v,
            None => {
                let corr = corrections_rule(choice_i, choice_ii, member);
                let lambda_l = ensemble.members[member];
                let a = measure_side(
                    model,
                    menu.side_i[choice_i],
                    lambda_l,
                    corr.side_i,
                    d,
                    settings,
                )?;
                let b = measure_side(
                    model,
                    menu.side_ii[choice_ii],
                    lambda_l,
                    corr.side_ii,
                    d,
                    settings,
                )?;
                cell.insert(key, (a, b));
                (a, b)
            }
        };
        counts[choice_i][choice_ii] += 1;
        sums[choice_i][choice_ii] += i64::from(a * b);
    }

    let mut m = [[0.0f64; 2]; 2];
    for (i, row) in counts.iter().enumerate() {
        for (j, count) in row.iter().enumerate() {
            if *count == 0 {
                return Err(Error::EmptyBin {
                    side_i: i,
                    side_ii: j,
                });
            }
            m[i][j] = sums[i][j] as f64 / *count as f64;
        }
    }
    let s = m[0][0] - m[0][1] + m[1][0] + m[1][1];

    let mut records = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            for member in 0..n_members {
                if let Some((a, b)) = cell.get(&(i, j, member)) {
                    let corr = corrections_rule(i, j, member);
                    records.push(SwitchingRecord {
                        choice_i: i,
                        choice_ii: j,
                        member,
                        lambda_l: ensemble.members[member],
                        lambda_nl_i: corr.side_i,
                        lambda_nl_ii: corr.side_ii,
                        outcome_i: *a,
                        outcome_ii: *b,
                    });
                }
            }
        }
    }

    Ok(SwitchingResult {
        menu: *menu,
        n_pairs,
        seed,
        counts,
        m,
        s,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_setup() -> (Model, Dichotomizer, IntegratorSettings) {
        (
            Model::default(),
            Dichotomizer::default(),
            IntegratorSettings::default(),
        )
    }

    #[test]
    fn dichotomize_is_strict_at_boundary() {
        assert_eq!(dichotomize(0.01, 0.3), 1);
        assert_eq!(dichotomize(1.10, 0.3), -1);
        assert_eq!(dichotomize(0.3, 0.3), -1);
        assert_eq!(dichotomize(-0.3, 0.3), -1);
        assert_eq!(dichotomize(0.0, 1e-9), 1);
    }

    #[test]
    fn bell_s_arithmetic_and_domain() {
        assert_eq!(bell_s(1.0, -1.0, 1.0, 1.0).unwrap(), 4.0);
        assert_eq!(bell_s(1.0, -1.0, 1.0, -1.0).unwrap(), 2.0);
        assert!(matches!(bell_s(1.2, 0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(bell_s(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_of_products_parity() {
        assert_eq!(mean_of_products([1i8, -1].into_iter()), 0.0);
        assert_eq!(mean_of_products([1i8, 1, 1].into_iter()), 1.0);
        assert_eq!(mean_of_products([1i8, 1, -1, -1].into_iter()), 0.0);
    }

    #[test]
    fn single_member_same_settings_gives_unity() {
        let (model, d, settings) = default_setup();
        let run = RunSpec::new(
            0.23,
            0.23,
            Ensemble::single(PhaseState::new(0.6, 0.0)),
            None,
        )
        .unwrap();
        let c = correlation(&model, &run, &d, &settings).unwrap();
        assert_eq!(c.m, 1.0);
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.records[0].product, 1);
    }

    #[test]
    fn perturbation_flips_outcome_in_chaotic_regime() {
        // Wrapped angles at t_m = 100 for x = 0.230: the unperturbed
        // hidden variable gives a small |theta| (outcome +1) and the
        // perturbed one a large |theta| (outcome -1).
        let (model, d, settings) = default_setup();
        let out0 = measure_side(
            &model,
            0.230,
            PhaseState::new(0.6, 0.0),
            PhaseState::ZERO,
            &d,
            &settings,
        )
        .unwrap();
        let out1 = measure_side(
            &model,
            0.230,
            PhaseState::new(0.6, 0.0),
            PhaseState::new(0.0, 1e-3),
            &d,
            &settings,
        )
        .unwrap();
        assert_eq!(out0, 1);
        assert_eq!(out1, -1);
    }

    #[test]
    fn run_spec_validation() {
        let ens = Ensemble::single(PhaseState::new(0.6, 0.0));
        assert!(RunSpec::new(1.5, 0.2, ens.clone(), None).is_err());
        assert!(RunSpec::new(-0.1, 0.2, ens.clone(), None).is_err());
        assert!(RunSpec::new(0.1, 0.2, ens.clone(), Some(vec![])).is_err());
        assert!(Ensemble::new(vec![]).is_err());
        assert!(RunSpec::new(0.1, 0.2, ens, None).is_ok());
    }

    #[test]
    fn plan_rejects_mismatched_runs() {
        let (model, d, settings) = default_setup();
        let ens = Ensemble::single(PhaseState::new(0.6, 0.0));
        let runs = [
            RunSpec::new(0.16, 0.17, ens.clone(), None).unwrap(),
            RunSpec::new(0.16, 0.17, ens.clone(), None).unwrap(), // should be (a, b')
            RunSpec::new(0.23, 0.17, ens.clone(), None).unwrap(),
            RunSpec::new(0.23, 0.232, ens, None).unwrap(),
        ];
        assert!(
            ExperimentPlan::new(model, (0.16, 0.17, 0.23, 0.232), runs, d, settings).is_err()
        );
    }

    #[test]
    fn time_grid_spacing() {
        let g = time_grid(1.0, 4.0, 1.0);
        assert_eq!(g, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(time_grid(1.0, 0.5, 1.0).is_empty());
    }

    #[test]
    fn switching_zero_rule_single_member_matches_static() {
        let (model, d, settings) = default_setup();
        let menu = SwitchingMenu {
            side_i: [0.16, 0.23],
            side_ii: [0.17, 0.232],
        };
        let ens = Ensemble::single(PhaseState::new(0.6, 0.0));
        let res = run_random_switching(
            &model,
            &menu,
            &ens,
            64,
            7,
            |_, _, _| SideCorrections::ZERO,
            &d,
            &settings,
        )
        .unwrap();
        // With a single member and no corrections each conditional mean
        // equals the corresponding static correlation exactly.
        for (i, xi) in menu.side_i.iter().enumerate() {
            for (j, xj) in menu.side_ii.iter().enumerate() {
                let run = RunSpec::new(*xi, *xj, ens.clone(), None).unwrap();
                let st = correlation(&model, &run, &d, &settings).unwrap();
                assert_eq!(res.m[i][j], st.m, "combo ({i},{j})");
            }
        }
    }

    #[test]
    fn switching_single_pair_leaves_empty_bins() {
        let (model, d, settings) = default_setup();
        let menu = SwitchingMenu {
            side_i: [0.16, 0.23],
            side_ii: [0.17, 0.232],
        };
        let ens = Ensemble::single(PhaseState::new(0.6, 0.0));
        let res = run_random_switching(
            &model,
            &menu,
            &ens,
            1,
            1,
            |_, _, _| SideCorrections::ZERO,
            &d,
            &settings,
        );
        assert!(matches!(res, Err(Error::EmptyBin { .. })));
    }

    #[test]
    fn switching_is_reproducible() {
        let (model, d, settings) = default_setup();
        let menu = SwitchingMenu {
            side_i: [0.16, 0.23],
            side_ii: [0.17, 0.232],
        };
        let ens = Ensemble::new(vec![PhaseState::new(0.6, 0.0), PhaseState::new(0.1, 0.0)])
            .unwrap();
        let run = || {
            run_random_switching(
                &model,
                &menu,
                &ens,
                40,
                1234,
                |_, _, _| SideCorrections::ZERO,
                &d,
                &settings,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
