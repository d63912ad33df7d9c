//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `--nocapture`) and asserting its stated tolerance.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, SQRT_2};
use std::time::Instant;

use compass_bell::dynamics::{
    bifurcation_scan, distinct_count, largest_lyapunov, lyapunov_scan, LyapunovSettings,
};
use compass_bell::eprb::{
    bell_s, run_plan, run_random_switching, scan_measuring_times, time_grid, Dichotomizer,
    Ensemble, ExperimentPlan, SideCorrections, SwitchingMenu,
};
use compass_bell::nonlocal::{reproduce_cos, SynthesisOptions};
use compass_bell::ode::{
    integrate, state_at, wrap_angle, CompassParams, IntegratorSettings, Model, PhaseState,
};
use compass_bell::separatrix::{reproduce_cos_exact, Assignment, SeparatrixReport};

fn report(criterion: &str, pass: bool, start: Instant, detail: &str) {
    println!(
        "acceptance {criterion}: {} ({:.2?}) — {detail}",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed()
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Criterion 1: regular-regime angles match the reference values within
/// 0.05 and are insensitive to the 1e-3 velocity perturbation.
#[test]
fn criterion_1_table_regular_regime() {
    let start = Instant::now();
    let settings = IntegratorSettings::default();
    let mut pass = true;
    let mut detail = String::new();
    for (x, reference) in [(0.160, 0.01), (0.170, -0.29)] {
        let params = CompassParams::with_x(x).unwrap();
        let theta0 = state_at(&params, PhaseState::new(0.6, 0.0), 100.0, &settings)
            .unwrap()
            .wrapped_theta();
        let theta1 = state_at(&params, PhaseState::new(0.6, 1e-3), 100.0, &settings)
            .unwrap()
            .wrapped_theta();
        pass &= (theta0 - reference).abs() <= 0.05;
        pass &= (theta1 - reference).abs() <= 0.05;
        pass &= (theta0 - theta1).abs() < 1e-2;
        detail.push_str(&format!("x={x}: {theta0:.4}/{theta1:.4} vs {reference}; "));
    }
    report("1 (regular-regime angles)", pass, start, &detail);
}

/// Criterion 2: chaotic-regime separation and Lyapunov signs.
#[test]
fn criterion_2_table_chaotic_regime() {
    let start = Instant::now();
    let settings = IntegratorSettings::default();
    let lyap = LyapunovSettings::default();
    let mut pass = true;
    let mut detail = String::new();
    for x in [0.230, 0.232] {
        let params = CompassParams::with_x(x).unwrap();
        let t0 = state_at(&params, PhaseState::new(0.6, 0.0), 100.0, &settings)
            .unwrap()
            .wrapped_theta();
        let t1 = state_at(&params, PhaseState::new(0.6, 1e-3), 100.0, &settings)
            .unwrap()
            .wrapped_theta();
        let sep = wrap_angle(t0 - t1).abs();
        pass &= sep > 0.1;
        detail.push_str(&format!("x={x}: sep={sep:.3}; "));
    }
    for (x, expect_positive) in [(0.160, false), (0.170, false), (0.230, true), (0.232, true)] {
        let params = CompassParams::with_x(x).unwrap();
        let lambda =
            largest_lyapunov(&params, PhaseState::new(0.6, 0.0), &lyap, &settings).unwrap();
        pass &= (lambda > 0.0) == expect_positive;
        detail.push_str(&format!("lambda({x})={lambda:+.4}; "));
    }
    report("2 (chaotic-regime separation and exponents)", pass, start, &detail);
}

/// Criterion 3: Bell bound by enumeration for shared ensembles (N <= 3)
/// and exact dichotomy of delta-ensemble experiments.
#[test]
fn criterion_3_bell_bound() {
    let start = Instant::now();
    let mut pass = true;
    for n in 1..=3usize {
        for mask in 0u32..(1 << (4 * n)) {
            let out = |slot: usize, member: usize| -> f64 {
                if mask >> (slot * n + member) & 1 == 1 {
                    1.0
                } else {
                    -1.0
                }
            };
            let mean = |i_slot: usize, ii_slot: usize| -> f64 {
                (0..n).map(|m| out(i_slot, m) * out(ii_slot, m)).sum::<f64>() / n as f64
            };
            let s = bell_s(mean(0, 2), mean(0, 3), mean(1, 2), mean(1, 3)).unwrap();
            pass &= s.abs() <= 2.0 + 1e-12;
        }
    }

    let model = Model::default();
    let settings = IntegratorSettings::default();
    let mut deltas = String::new();
    for lambda in [PhaseState::new(0.6, 0.0), PhaseState::new(0.6, 1e-3)] {
        let plan = ExperimentPlan::shared_ensemble(
            model,
            (0.160, 0.170, 0.230, 0.232),
            Ensemble::single(lambda),
            Dichotomizer::default(),
            settings,
        )
        .unwrap();
        let s = run_plan(&plan).unwrap().s;
        pass &= s == 2.0 || s == -2.0;
        deltas.push_str(&format!("S={s:+.0}; "));
    }
    report(
        "3 (Bell bound by enumeration)",
        pass,
        start,
        &format!("all |S| <= 2 over 4N-bit assignments, N <= 3; delta-ensembles: {deltas}"),
    );
}

/// Criterion 4: the drift scenario reaches |S| = 4 at t_m = 100 directly
/// or at an escalated measuring time below 3200.
#[test]
fn criterion_4_drift_violation() {
    let start = Instant::now();
    let model = Model::default();
    let settings = IntegratorSettings::default();
    let l1 = PhaseState::new(0.6, 0.0);
    let plan = ExperimentPlan::drifting_single(
        model,
        (0.160, 0.170, 0.230, 0.232),
        [l1, l1, l1, PhaseState::new(0.6, 1e-3)],
        Dichotomizer::new(0.3, 100.0).unwrap(),
        settings,
    )
    .unwrap();
    let direct = run_plan(&plan).unwrap();
    let (pass, detail) = if direct.s.abs() == 4.0 {
        (true, format!("S = {:+.0} at t_m = 100 directly", direct.s))
    } else {
        match scan_measuring_times(&plan, &time_grid(1.0, 3200.0, 1.0), 4.0).unwrap() {
            Some(hit) => (
                hit.result.s.abs() == 4.0 && hit.t_m <= 3200.0,
                format!("S = {:+.0} at searched t_m = {}", hit.result.s, hit.t_m),
            ),
            None => (false, "no measuring time <= 3200 reaches |S| = 4".into()),
        }
    };
    report("4 (drift violation)", pass, start, &detail);
}

/// Criterion 5: a perturbation of magnitude <= 1e-5 reaches |S| = 4 at a
/// searched measuring time.
#[test]
fn criterion_5_weak_perturbation_violation() {
    let start = Instant::now();
    let model = Model::default();
    let settings = IntegratorSettings::default();
    let l1 = PhaseState::new(0.6, 0.0);
    let perturbation = 1e-5;
    let plan = ExperimentPlan::drifting_single(
        model,
        (0.16007, 0.16008, 0.16009, 0.230069),
        [l1, PhaseState::new(0.6, perturbation), l1, l1],
        Dichotomizer::new(0.001, 100.0).unwrap(),
        settings,
    )
    .unwrap();
    let hit = scan_measuring_times(&plan, &time_grid(1.0, 3200.0, 0.1), 4.0).unwrap();
    let (pass, detail) = match hit {
        Some(h) => (
            h.result.s.abs() == 4.0,
            format!(
                "S = {:+.0} at t_m = {} with |perturbation| = {perturbation}",
                h.result.s, h.t_m
            ),
        ),
        None => (false, "no measuring time <= 3200 reaches |S| = 4".into()),
    };
    report("5 (weak-perturbation violation)", pass, start, &detail);
}

/// Criterion 6: cosine synthesis on the compass model with the stock
/// eight-member ensemble: every pair within 1/16 of the cosine, all
/// corrections strictly below 1e-3.
#[test]
fn criterion_6_cos_law_synthesis() {
    let start = Instant::now();
    let model = Model::default();
    let report_data = reproduce_cos(&model, &SynthesisOptions::default()).unwrap();
    let max_err = report_data.max_abs_err();
    let pass = report_data.pairs.len() == 16
        && max_err <= 0.0625
        && report_data.max_abs_correction < 1e-3
        && report_data.failure_count == 0;
    report(
        "6 (cosine-law synthesis)",
        pass,
        start,
        &format!(
            "max |M - cos| = {max_err:.4} over {} pairs, max |correction| = {:.3e}, failures = {}",
            report_data.pairs.len(),
            report_data.max_abs_correction,
            report_data.failure_count
        ),
    );
}

/// Criterion 7: separatrix synthesis at the Bell angles with N = 1000 hits
/// the quantum value within 2e-3, identically over 30 orders of magnitude
/// of the correction scale.
#[test]
fn criterion_7_separatrix_exactness() {
    let start = Instant::now();
    let grid = [0.0, FRAC_PI_8, FRAC_PI_4, 3.0 * FRAC_PI_8];
    let (a, a_prime, b, b_prime) = (0.0, FRAC_PI_4, FRAC_PI_8, 3.0 * FRAC_PI_8);
    let assignment = Assignment::BellOptimal {
        a,
        a_prime,
        b,
        b_prime,
    };
    let quantum = 2.0 * SQRT_2;

    let strip = |mut r: SeparatrixReport| {
        r.epsilon = 0.0;
        r.max_abs_correction = 0.0;
        for p in &mut r.pairs {
            p.corrections.clear();
        }
        r
    };

    let reference = reproduce_cos_exact(&grid, 1000, 1e-3, assignment).unwrap();
    let s = reference.bell_sum(a, a_prime, b, b_prime).unwrap();
    let mut pass = (s - quantum).abs() <= 2e-3;

    let reference_stripped = strip(reference);
    let mut scales_checked = 0;
    for exp in (3..=33).chain([300]) {
        let eps = 10f64.powi(-exp);
        let r = strip(reproduce_cos_exact(&grid, 1000, eps, assignment).unwrap());
        pass &= r == reference_stripped;
        scales_checked += 1;
    }
    report(
        "7 (separatrix exactness)",
        pass,
        start,
        &format!(
            "|S - 2*sqrt(2)| = {:.3e}, identical across {scales_checked} correction scales down to 1e-300",
            (s - quantum).abs()
        ),
    );
}

/// Criterion 8: the Lyapunov scan over the standard amplitude interval
/// puts the first positive exponent inside [0.225, 0.2321], and the
/// bifurcation dataset on the same grid is consistent.
#[test]
fn criterion_8_chaos_onset_scan() {
    let start = Instant::now();
    let model = Model::default();
    let settings = IntegratorSettings::default();
    let base = model.params(0.16).unwrap();
    let init = PhaseState::new(0.6, 0.0);
    let (x_lo, x_hi, n_x) = (0.1600, 0.2321, 25);

    let scan = lyapunov_scan(
        &base,
        x_lo,
        x_hi,
        n_x,
        init,
        &LyapunovSettings::default(),
        &settings,
    )
    .unwrap();
    let first_positive = scan.iter().find(|(_, l)| *l > 0.0).map(|(x, _)| *x);
    let mut pass = matches!(first_positive, Some(x) if (0.225..=0.2321).contains(&x));

    let ds = bifurcation_scan(&base, x_lo, x_hi, n_x, init, 200, 32, &settings).unwrap();
    pass &= ds.points.len() == n_x;
    pass &= ds
        .points
        .iter()
        .zip(&scan)
        .all(|(p, (x, _))| p.x == *x && !p.thetas.is_empty());
    let distinct_at_end = distinct_count(&ds.points.last().unwrap().thetas, 1e-4);
    pass &= distinct_at_end > 8;
    report(
        "8 (chaos-onset scan)",
        pass,
        start,
        &format!(
            "first positive exponent at x = {first_positive:?}, distinct orbit count at x = {x_hi}: {distinct_at_end}"
        ),
    );
}

/// Criterion 9: fourth-order convergence of the integrator and bit
/// reproducibility of experiments under fixed configuration and seed.
#[test]
fn criterion_9_numerics() {
    let start = Instant::now();
    let params = CompassParams::with_x(0.160).unwrap();
    let init = PhaseState::new(0.6, 0.0);
    let final_at = |step: f64| {
        let settings = IntegratorSettings {
            step,
            ..IntegratorSettings::default()
        };
        state_at(&params, init, 100.0, &settings).unwrap()
    };
    let h = 0.02;
    let (f1, f2, f3) = (final_at(h), final_at(h / 2.0), final_at(h / 4.0));
    let dist = |a: PhaseState, b: PhaseState| {
        ((a.theta - b.theta).powi(2) + (a.theta_dot - b.theta_dot).powi(2)).sqrt()
    };
    let ratio = dist(f1, f2) / dist(f2, f3);
    let mut pass = (12.0..=20.0).contains(&ratio);

    // Bit reproducibility: trajectories, plans, and seeded switching.
    let settings = IntegratorSettings::default();
    let t1 = integrate(&params, init, 50.0, &settings, 100).unwrap();
    let t2 = integrate(&params, init, 50.0, &settings, 100).unwrap();
    pass &= t1 == t2;
    let mut csv1 = Vec::new();
    let mut csv2 = Vec::new();
    t1.write_csv(&mut csv1).unwrap();
    t2.write_csv(&mut csv2).unwrap();
    pass &= csv1 == csv2;

    let model = Model::default();
    let plan = ExperimentPlan::shared_ensemble(
        model,
        (0.160, 0.170, 0.230, 0.232),
        Ensemble::new(vec![init, PhaseState::new(0.6, 1e-3)]).unwrap(),
        Dichotomizer::default(),
        settings,
    )
    .unwrap();
    pass &= run_plan(&plan).unwrap() == run_plan(&plan).unwrap();

    let menu = SwitchingMenu {
        side_i: [0.16, 0.23],
        side_ii: [0.17, 0.232],
    };
    let ens = Ensemble::single(init);
    let switching = || {
        run_random_switching(
            &model,
            &menu,
            &ens,
            64,
            2024,
            |_, _, _| SideCorrections::ZERO,
            &Dichotomizer::default(),
            &settings,
        )
        .unwrap()
    };
    pass &= switching() == switching();

    report(
        "9 (numerics)",
        pass,
        start,
        &format!("convergence ratio = {ratio:.2} (target 16 +/- 4), reruns bit-identical"),
    );
}
