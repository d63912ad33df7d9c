//! A one-parameter flow whose separatrix does not depend on the parameter:
//! `lambda_dot = x * lambda * (1 - lambda^2)` with attractors at `+1` and
//! `-1` and the invariant separatrix `{lambda = 0}` for every `x` in the
//! allowed interval.
//!
//! When the local hidden variables sit exactly on the separatrix,
//! arbitrarily small setting-dependent corrections deterministically select
//! an attractor, so the cosine correlation can be synthesized exactly at
//! every correction scale, with no control over the measuring time
//! required: the outcome is the sign of the initial value, which the flow
//! conserves.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlocal::{build_target_table, TargetTable};
use crate::ode::fmt_f64;

/// Parameter interval the flow is defined over.
pub const OMEGA: (f64, f64) = (0.5, 2.0);

fn check_param(x: f64) -> Result<()> {
    if !(x.is_finite() && (OMEGA.0..=OMEGA.1).contains(&x)) {
        return Err(Error::InvalidParameter(format!(
            "flow parameter must lie in [{}, {}], got {x}",
            OMEGA.0, OMEGA.1
        )));
    }
    Ok(())
}

/// Attractor selected by the initial value: the flow conserves
/// `sign(lambda)` and drives `|lambda|` to 1, so the projection outcome is
/// the sign of `lambda0`, identically for every parameter in the interval.
pub fn project(x: f64, lambda0: f64) -> Result<i8> {
    check_param(x)?;
    if !lambda0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "initial value must be finite, got {lambda0}"
        )));
    }
    if lambda0 == 0.0 {
        return Err(Error::OnSeparatrix);
    }
    Ok(if lambda0 > 0.0 { 1 } else { -1 })
}

/// Numerical state of the flow at time `t`; a witness used to validate
/// [`project`] against the actual dynamics.
pub fn flow_state(x: f64, lambda0: f64, t: f64) -> Result<f64> {
    check_param(x)?;
    if !lambda0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "initial value must be finite, got {lambda0}"
        )));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time must be non-negative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(lambda0);
    }
    let f = |l: f64| x * l * (1.0 - l * l);
    let n = ((t / 1e-3).ceil() as u64).max(1);
    let h = t / n as f64;
    let mut l = lambda0;
    for j in 0..n {
        let k1 = f(l);
        let k2 = f(l + 0.5 * h * k1);
        let k3 = f(l + 0.5 * h * k2);
        let k4 = f(l + h * k3);
        l += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !l.is_finite() {
            return Err(Error::NonFiniteState {
                t: (j + 1) as f64 * h,
            });
        }
    }
    Ok(l)
}

/// Map an analyser angle in `[0, pi/2]` onto the flow's parameter
/// interval. Cosmetic for this system (outcomes are parameter-independent)
/// but kept for report parity with the compass synthesis.
pub fn angle_to_param(phi: f64) -> Result<f64> {
    if !(0.0..=FRAC_PI_2).contains(&phi) {
        return Err(Error::Domain(format!(
            "analyser angle {phi} lies outside [0, pi/2]"
        )));
    }
    Ok(OMEGA.0 + phi / FRAC_PI_2 * (OMEGA.1 - OMEGA.0))
}

/// How per-pair product counts are chosen from the target table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "policy")]
pub enum Assignment {
    /// Every ordered pair independently rounds to the nearest achievable
    /// mean (ties toward more `+1` products).
    Nearest,
    /// The four pairs forming the Bell sum for the given role angles pick
    /// between their two nearest achievable means so the assembled sum
    /// lands closest to the quantum value; all other pairs round nearest.
    /// Per-pair deviations stay within twice the discretization floor and
    /// are reported, not hidden.
    BellOptimal {
        a: f64,
        a_prime: f64,
        b: f64,
        b_prime: f64,
    },
}

/// Scalar per-side corrections of one member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarCorrections {
    pub side_i: f64,
    pub side_ii: f64,
}

/// Synthesis outcome for one ordered angle pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatrixPairReport {
    pub a: f64,
    pub b: f64,
    pub x_i: f64,
    pub x_ii: f64,
    pub target: f64,
    pub plus_count: usize,
    pub discretized: f64,
    /// Correlation measured by projecting every corrected member.
    pub m: f64,
    pub abs_err: f64,
    pub corrections: Vec<ScalarCorrections>,
}

/// Exact-synthesis report; the CSV layout matches the compass synthesis
/// report for direct comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatrixReport {
    pub n: usize,
    pub epsilon: f64,
    pub assignment: Assignment,
    pub discretization_floor: f64,
    pub pairs: Vec<SeparatrixPairReport>,
    pub max_abs_correction: f64,
}

impl SeparatrixReport {
    pub fn find_pair(&self, a: f64, b: f64) -> Option<&SeparatrixPairReport> {
        self.pairs.iter().find(|p| p.a == a && p.b == b)
    }

    /// Bell sum assembled from the four role pairs.
    pub fn bell_sum(&self, a: f64, a_prime: f64, b: f64, b_prime: f64) -> Result<f64> {
        let m = |pa: f64, pb: f64| {
            self.find_pair(pa, pb)
                .map(|p| p.m)
                .ok_or_else(|| Error::Domain(format!("pair ({pa}, {pb}) not in the report")))
        };
        Ok(m(a, b)? - m(a, b_prime)? + m(a_prime, b)? + m(a_prime, b_prime)?)
    }

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

/// The two achievable product counts bracketing a target mean, deduped
/// when the target is exactly achievable.
fn bracketing_counts(target: f64, n: usize) -> Vec<usize> {
    let ideal = n as f64 * (1.0 + target) / 2.0;
    let lo = ideal.floor().clamp(0.0, n as f64) as usize;
    let hi = ideal.ceil().clamp(0.0, n as f64) as usize;
    if lo == hi {
        vec![lo]
    } else {
        vec![lo, hi]
    }
}

fn apply_assignment(table: &mut TargetTable, assignment: &Assignment) -> Result<()> {
    let Assignment::BellOptimal {
        a,
        a_prime,
        b,
        b_prime,
    } = *assignment
    else {
        return Ok(());
    };
    let roles = [(a, b), (a, b_prime), (a_prime, b), (a_prime, b_prime)];
    let role_entry: Vec<usize> = roles
        .iter()
        .map(|(ra, rb)| {
            table
                .entries
                .iter()
                .position(|e| e.a == *ra && e.b == *rb)
                .ok_or_else(|| {
                    Error::Domain(format!(
                        "Bell role pair ({ra}, {rb}) is not an ordered pair of the grid"
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let s_target = roles
        .iter()
        .enumerate()
        .map(|(i, (ra, rb))| {
            let c = (2.0 * (ra - rb)).cos();
            if i == 1 {
                -c
            } else {
                c
            }
        })
        .sum::<f64>();

    // Duplicate role pairs must share one choice.
    let mut distinct: Vec<usize> = role_entry.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let options: Vec<Vec<usize>> = distinct
        .iter()
        .map(|&idx| bracketing_counts(table.entries[idx].target, table.n))
        .collect();

    let n = table.n as f64;
    let mean_of = |count: usize| (2.0 * count as f64 - n) / n;
    let mut best: Option<(f64, f64, i64, Vec<usize>)> = None;
    let total: usize = options.iter().map(|o| o.len()).product();
    for combo in 0..total {
        let mut rem = combo;
        let picks: Vec<usize> = options
            .iter()
            .map(|o| {
                let p = o[rem % o.len()];
                rem /= o.len();
                p
            })
            .collect();
        let count_for = |entry_idx: usize| {
            let slot = distinct.iter().position(|d| *d == entry_idx).unwrap();
            picks[slot]
        };
        let s: f64 = role_entry
            .iter()
            .enumerate()
            .map(|(i, idx)| {
                let m = mean_of(count_for(*idx));
                if i == 1 {
                    -m
                } else {
                    m
                }
            })
            .sum();
        let s_err = (s - s_target).abs();
        let pair_err: f64 = distinct
            .iter()
            .zip(&picks)
            .map(|(idx, p)| (mean_of(*p) - table.entries[*idx].target).abs())
            .sum();
        let plus_total: i64 = picks.iter().map(|p| *p as i64).sum();
        let candidate = (s_err, pair_err, -plus_total, picks.clone());
        let better = match &best {
            None => true,
            Some((be, bp, bt, _)) => {
                (s_err, pair_err, -plus_total) < (*be, *bp, *bt)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    let (_, _, _, picks) = best.expect("at least one combination exists");
    for (slot, idx) in distinct.iter().enumerate() {
        let e = &mut table.entries[*idx];
        e.plus_count = picks[slot];
        e.discretized = mean_of(picks[slot]);
    }
    Ok(())
}

/// Exact synthesis of the cosine correlation: every local hidden variable
/// sits on the separatrix (`lambda = 0`) and each side receives the
/// correction `+/- epsilon/2` whose sign realizes the assigned product.
/// The correlation equals the discretized target for every pair and every
/// `epsilon > 0`; the output is independent of `epsilon` because only the
/// correction's sign matters.
pub fn reproduce_cos_exact(
    grid: &[f64],
    n: usize,
    epsilon: f64,
    assignment: Assignment,
) -> Result<SeparatrixReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut table = build_target_table(grid, n)?;
    apply_assignment(&mut table, &assignment)?;

    let half = epsilon / 2.0;
    let mut pairs = Vec::with_capacity(table.entries.len());
    for entry in &table.entries {
        let x_i = angle_to_param(entry.a)?;
        let x_ii = angle_to_param(entry.b)?;
        let mut corrections = Vec::with_capacity(n);
        let mut sum: i64 = 0;
        for member in 0..n {
            let product: i8 = if member < entry.plus_count { 1 } else { -1 };
            // Canonical split: side I positive, side II carries the product.
            let corr = ScalarCorrections {
                side_i: half,
                side_ii: f64::from(product) * half,
            };
            let outcome_i = project(x_i, corr.side_i)?;
            let outcome_ii = project(x_ii, corr.side_ii)?;
            sum += i64::from(outcome_i * outcome_ii);
            corrections.push(corr);
        }
        let m = sum as f64 / n as f64;
        pairs.push(SeparatrixPairReport {
            a: entry.a,
            b: entry.b,
            x_i,
            x_ii,
            target: entry.target,
            plus_count: entry.plus_count,
            discretized: entry.discretized,
            m,
            abs_err: (m - entry.target).abs(),
            corrections,
        });
    }
    Ok(SeparatrixReport {
        n,
        epsilon,
        assignment,
        discretization_floor: 1.0 / n as f64,
        pairs,
        max_abs_correction: half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

    /// Closed-form solution: `lambda^2` follows a logistic curve, written
    /// in an overflow-safe form.
    fn exact_flow(x: f64, lambda0: f64, t: f64) -> f64 {
        let u0 = lambda0 * lambda0;
        let u = u0 / (u0 + (1.0 - u0) * (-2.0 * x * t).exp());
        lambda0.signum() * u.sqrt()
    }

    #[test]
    fn project_examples() {
        assert_eq!(project(1.0, 0.3).unwrap(), 1);
        assert_eq!(project(1.0, -1e-12).unwrap(), -1);
        assert!(matches!(project(1.0, 0.0), Err(Error::OnSeparatrix)));
        assert!(matches!(project(1.0, -0.0), Err(Error::OnSeparatrix)));
        assert!(project(0.1, 0.3).is_err());
        assert!(project(2.5, 0.3).is_err());
    }

    #[test]
    fn flow_fixed_points() {
        for t in [0.0, 1.0, 30.0] {
            assert_eq!(flow_state(1.0, 1.0, t).unwrap(), 1.0);
            assert_eq!(flow_state(1.0, 0.0, t).unwrap(), 0.0);
            assert_eq!(flow_state(1.0, -1.0, t).unwrap(), -1.0);
        }
    }

    #[test]
    fn flow_matches_closed_form() {
        for x in [0.5, 1.0, 2.0] {
            for lambda0 in [1e-6, -1e-6, 0.3, -0.7, 1.5] {
                for t in [0.5, 5.0, 30.0] {
                    let numeric = flow_state(x, lambda0, t).unwrap();
                    let exact = exact_flow(x, lambda0, t);
                    assert!(
                        (numeric - exact).abs() < 1e-9,
                        "x={x} l0={lambda0} t={t}: {numeric} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn tiny_seed_reaches_attractor() {
        let l = flow_state(1.0, 1e-6, 30.0).unwrap();
        assert!((l - 1.0).abs() < 1e-3);
    }

    #[test]
    fn sign_is_conserved_and_attraction_monotone() {
        for x in [0.5, 1.25, 2.0] {
            for lambda0 in [1e-9f64, -1e-9, 0.2, -0.99] {
                let mut prev = lambda0.abs();
                for t in [0.1, 1.0, 5.0, 20.0, 60.0] {
                    let l = flow_state(x, lambda0, t).unwrap();
                    assert_eq!(l.signum(), lambda0.signum());
                    assert!(l.abs() >= prev - 1e-12);
                    prev = l.abs();
                }
            }
        }
    }

    #[test]
    fn projection_agrees_with_flow_and_ignores_time_and_parameter() {
        let lambdas = [1e-9, -1e-9, 2e-4, -0.5, 0.5];
        let xs = [0.5, 0.8, 1.0, 1.7, 2.0];
        for &lambda0 in &lambdas {
            let outcomes: Vec<i8> = xs.iter().map(|&x| project(x, lambda0).unwrap()).collect();
            assert!(outcomes.windows(2).all(|w| w[0] == w[1]));
            for &x in &xs {
                let t_ref = 50.0 / x;
                for t in [t_ref, 2.0 * t_ref, 10.0 * t_ref] {
                    let l = flow_state(x, lambda0, t).unwrap();
                    assert_eq!(
                        project(x, lambda0).unwrap(),
                        if l > 0.0 { 1 } else { -1 },
                        "x={x} lambda0={lambda0} t={t}"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_synthesis_matches_nearest_targets_for_small_n() {
        let grid = [0.0, FRAC_PI_8, FRAC_PI_4, 3.0 * FRAC_PI_8];
        let report = reproduce_cos_exact(&grid, 8, 1e-3, Assignment::Nearest).unwrap();
        let table = build_target_table(&grid, 8).unwrap();
        assert_eq!(report.pairs.len(), 16);
        for (p, e) in report.pairs.iter().zip(&table.entries) {
            assert_eq!(p.m, e.discretized);
            assert_eq!(p.discretized, e.discretized);
            assert!((p.discretized - p.target).abs() <= report.discretization_floor + 1e-15);
        }
    }

    #[test]
    fn exact_synthesis_is_independent_of_epsilon() {
        let grid = [0.0, FRAC_PI_8, FRAC_PI_4, 3.0 * FRAC_PI_8];
        let strip = |mut r: SeparatrixReport| {
            r.epsilon = 0.0;
            r.max_abs_correction = 0.0;
            for p in &mut r.pairs {
                p.corrections.clear();
            }
            r
        };
        let base = strip(reproduce_cos_exact(&grid, 8, 1e-3, Assignment::Nearest).unwrap());
        for exp in (3..=300).step_by(33) {
            let eps = 10f64.powi(-exp);
            let r = strip(reproduce_cos_exact(&grid, 8, eps, Assignment::Nearest).unwrap());
            assert_eq!(r, base, "epsilon = 1e-{exp}");
        }
    }

    #[test]
    fn bell_optimal_assignment_beats_nearest_at_chsh_angles() {
        let grid = [0.0, FRAC_PI_8, FRAC_PI_4, 3.0 * FRAC_PI_8];
        let (a, a_prime, b, b_prime) = (0.0, FRAC_PI_4, FRAC_PI_8, 3.0 * FRAC_PI_8);
        let quantum = 2.0 * std::f64::consts::SQRT_2;

        let nearest = reproduce_cos_exact(&grid, 1000, 1e-3, Assignment::Nearest).unwrap();
        let s_nearest = nearest.bell_sum(a, a_prime, b, b_prime).unwrap();
        // Means of 1000 products have even numerators, so per-pair nearest
        // rounding lands all four sums on 0.708 and the errors add up.
        assert!((s_nearest - 2.832).abs() < 1e-12);

        let balanced = reproduce_cos_exact(
            &grid,
            1000,
            1e-3,
            Assignment::BellOptimal {
                a,
                a_prime,
                b,
                b_prime,
            },
        )
        .unwrap();
        let s_balanced = balanced.bell_sum(a, a_prime, b, b_prime).unwrap();
        assert!((s_balanced - quantum).abs() < (s_nearest - quantum).abs());
        // Every adjusted pair stays within twice the floor.
        for p in &balanced.pairs {
            assert!((p.discretized - p.target).abs() <= 2.0 * balanced.discretization_floor);
        }
    }

    #[test]
    fn bell_optimal_requires_grid_roles() {
        let grid = [0.0, FRAC_PI_8];
        let r = reproduce_cos_exact(
            &grid,
            10,
            1e-3,
            Assignment::BellOptimal {
                a: 0.0,
                a_prime: FRAC_PI_4,
                b: FRAC_PI_8,
                b_prime: 3.0 * FRAC_PI_8,
            },
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
