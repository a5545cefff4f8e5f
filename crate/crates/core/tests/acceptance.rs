//! Acceptance suite: every quantitative law the laboratory must reproduce,
//! one test per criterion, each printing a PASS line with the measured
//! numbers. Tolerances are pinned here, not configurable.

use collapse_lab::asymptotics::{fit_exponential, identity_suite, CollapseSeries};
use collapse_lab::blowup::AutonomousField;
use collapse_lab::cc::{enumerate_cc, CcSolveOptions};
use collapse_lab::cli::{
    self, lagrange_segment_case, linear_saddle_case, rates_from_states, SegmentScenario,
};
use collapse_lab::nbody::{newton_rhs, ClusterPartition, MassSystem, State};
use collapse_lab::odeint::{integrate, IntegratorConfig};
use collapse_lab::scenario::parse_scenario;
use collapse_lab::segment::shadow_distance;
use collapse_lab::vec2::Vec2;
use nalgebra::DVector;
use std::sync::OnceLock;

struct Run {
    states: Vec<State>,
    masses: MassSystem,
    part: ClusterPartition,
    initial_r_g: f64,
    terminal_r_g: f64,
}

fn run_scenario(json: &str) -> Run {
    let sc = parse_scenario(json).expect("scenario parse");
    let resolved = sc.resolve().expect("scenario resolve");
    let sim = cli::simulate(&resolved, None).expect("simulate");
    Run {
        states: sim.states,
        masses: resolved.masses.clone(),
        part: resolved.part.clone(),
        initial_r_g: sim.initial_r_g,
        terminal_r_g: sim.terminal_r_g,
    }
}

fn kepler_dd() -> &'static Run {
    static CACHE: OnceLock<Run> = OnceLock::new();
    CACHE.get_or_init(|| {
        run_scenario(
            r#"{"schema":1, "preset":"kepler_pair",
                "integrator": {"rel_tol": 1e-15, "abs_tol": 1e-18,
                               "stop_fraction": 3e-7, "precision": "dd"}}"#,
        )
    })
}

fn lagrange_dd() -> &'static Run {
    static CACHE: OnceLock<Run> = OnceLock::new();
    CACHE.get_or_init(|| {
        run_scenario(
            r#"{"schema":1, "preset":"lagrange_homothetic",
                "integrator": {"rel_tol": 1e-15, "abs_tol": 1e-18,
                               "stop_fraction": 3e-7, "precision": "dd"}}"#,
        )
    })
}

fn shot_dd() -> &'static Run {
    static CACHE: OnceLock<Run> = OnceLock::new();
    CACHE.get_or_init(|| {
        run_scenario(
            r#"{"schema":1, "preset":"binary_in_3body",
                "integrator": {"rel_tol": 1e-15, "abs_tol": 1e-19, "precision": "dd"},
                "shoot": {"param_min": -0.2, "param_max": 0.2, "target_fraction": 1e-18}}"#,
        )
    })
}

fn analyzed(run: &Run, window: Option<(f64, f64)>) -> (CollapseSeries, collapse_lab::asymptotics::RateReport, collapse_lab::asymptotics::DecayReport) {
    let (_, series, rates, decay) =
        rates_from_states(&run.states, &run.masses, &run.part, window, run.initial_r_g)
            .expect("rate analysis");
    (series, rates, decay)
}

const KEPLER_A: f64 = 2.1633743554611122; // 9^{2/3}/2

/// Criterion 1: Kepler pair collapse in double-double mode reproduces the
/// limit A = 9^{2/3}/2 and all five ratio laws over sigma in [1e-8, 1e-5].
#[test]
fn criterion_1_kepler_ratio_laws() {
    let run = kepler_dd();
    let (_, rates, _) = analyzed(run, Some((1e-8, 1e-5)));
    let a_err = (rates.a_hat / KEPLER_A - 1.0).abs();
    assert!(a_err < 1e-3, "fitted A {} vs {}", rates.a_hat, KEPLER_A);
    for c in &rates.ratio_checks {
        let expected = c.expected_factor_of_a * KEPLER_A;
        let off = (c.achieved / expected - 1.0).abs();
        // every sample in the window within 0.5% of the closed-form limit
        assert!(
            off + c.deviation * (1.0 + off) < 5e-3,
            "{}: achieved {} expected {} deviation {}",
            c.name,
            c.achieved,
            expected,
            c.deviation
        );
    }
    println!(
        "criterion 1: PASS - A rel err {:.2e}, worst ratio deviation {:.2e}",
        a_err,
        rates
            .ratio_checks
            .iter()
            .map(|c| c.deviation)
            .fold(0.0f64, f64::max)
    );
}

/// Criterion 2: Lagrange homothetic triple: A, the terminal blow-up
/// velocity, an identically zero spin integral, and the CC residual tail.
#[test]
fn criterion_2_lagrange_homothetic() {
    let run = lagrange_dd();
    let (_, rates, decay) = analyzed(run, None);
    let a_expect = 3.0 * (9.0 / (2.0 * 3f64.sqrt())).powf(2.0 / 3.0);
    let a_err = (rates.a_hat / a_expect - 1.0).abs();
    assert!(a_err < 5e-3, "A {} vs {}", rates.a_hat, a_expect);
    let v_expect = -(2.0 / 3.0) * a_expect.powf(0.75);
    let v_err = (rates.v_terminal / v_expect - 1.0).abs();
    assert!(v_err < 1e-2, "v {} vs {}", rates.v_terminal, v_expect);
    assert!(
        rates.spin_total.abs() < 1e-11,
        "homothetic spin integral {:.3e}",
        rates.spin_total
    );
    assert!(
        rates.cc_residual_tail < 1e-8,
        "cc residual tail {:.3e}",
        rates.cc_residual_tail
    );
    assert!(decay.exact_zero, "isolated cluster must have zero perturbation");
    println!(
        "criterion 2: PASS - A rel err {:.2e}, v rel err {:.2e}, spin {:.1e}, cc tail {:.1e}",
        a_err, v_err, rates.spin_total, rates.cc_residual_tail
    );
}

/// Criterion 3: shooting binary inside a 3-body system: terminal depth,
/// J exponent, angular-momentum bounds of the collision, the bounded energy
/// tail, and exponential perturbation decay consistent with the r-chains.
#[test]
fn criterion_3_shooting_binary() {
    let run = shot_dd();
    assert!(
        run.terminal_r_g < 1e-10 * run.initial_r_g,
        "terminal r_G {:.3e} of initial",
        run.terminal_r_g / run.initial_r_g
    );
    let (series, rates, decay) = analyzed(run, None);
    assert!(
        (rates.j_exponent - 4.0 / 3.0).abs() < 0.01,
        "J exponent {}",
        rates.j_exponent
    );
    assert!(
        rates.mu_bound.is_finite() && rates.mu_bound > 0.0,
        "mu bound {}",
        rates.mu_bound
    );
    assert!(
        rates.mudot_bound.is_finite() && rates.mudot_bound > 0.0,
        "mudot bound {}",
        rates.mudot_bound
    );
    // the ratio to the bounding power must not grow toward the collision
    assert!(
        rates.mu_exponent >= 7.0 / 3.0 - 0.1,
        "mu exponent {} (need >= {})",
        rates.mu_exponent,
        7.0 / 3.0 - 0.1
    );
    assert!(
        rates.mudot_exponent >= 4.0 / 3.0 - 0.1,
        "mudot exponent {}",
        rates.mudot_exponent
    );
    assert!(
        rates.h_g_oscillation < 1e-4,
        "H_G oscillation {:.3e}",
        rates.h_g_oscillation
    );
    assert!(decay.all_decaying, "perturbation terms must decay");
    for t in &decay.terms {
        assert!(t.rate > 0.0, "{} rate {}", t.name, t.rate);
        match t.name.as_str() {
            // mu/sqrt(r) ~ r^3 exactly (mu ~ r^{7/2})
            "delta_theta" => assert!(
                (t.slope_ratio_vs_r / 3.0 - 1.0).abs() < 0.15,
                "delta_theta slope ratio {}",
                t.slope_ratio_vs_r
            ),
            // mu^2/r + r^2 dU_ext/dr: at least the 2 E_1 bound, tidally r^3
            "delta_v" => assert!(
                t.slope_ratio_vs_r > 1.7 && t.slope_ratio_vs_r < 3.45,
                "delta_v slope ratio {}",
                t.slope_ratio_vs_r
            ),
            _ => {}
        }
    }
    // mu^2/r decays at 6x the r rate
    let mu_window = rates.mu_window;
    let mut tau = Vec::new();
    let mut mu2r = Vec::new();
    let mut rws = Vec::new();
    for i in 0..series.sigma.len() {
        if series.sigma[i] >= mu_window.0 && series.sigma[i] <= mu_window.1 {
            tau.push(series.tau[i]);
            mu2r.push(series.mu[i] * series.mu[i] / series.r[i]);
            rws.push(series.r[i]);
        }
    }
    let (_, slope_mu2r) = fit_exponential(&tau, &mu2r).unwrap();
    let (_, slope_r) = fit_exponential(&tau, &rws).unwrap();
    let chain = slope_mu2r / slope_r;
    assert!(
        (chain / 6.0 - 1.0).abs() < 0.15,
        "mu^2/r vs r chain ratio {}",
        chain
    );
    println!(
        "criterion 3: PASS - terminal {:.1e}, J exp {:.5}, mu exp {:.3}, H osc {:.1e}, chain {:.2}",
        run.terminal_r_g / run.initial_r_g,
        rates.j_exponent,
        rates.mu_exponent,
        rates.h_g_oscillation,
        chain
    );
}

/// Criterion 4: pointwise identity suite on every collapse run.
#[test]
fn criterion_4_identity_suite() {
    let mut worst = (0.0f64, String::new());
    for (name, run, l_g) in [
        ("kepler", kepler_dd(), Vec2::ZERO),
        ("lagrange", lagrange_dd(), Vec2::ZERO),
        ("shot", shot_dd(), {
            let est = collapse_lab::asymptotics::estimate_t_l(
                &cli::trim_representation_floor(&shot_dd().states, &shot_dd().part),
                &shot_dd().masses,
                &shot_dd().part,
                &Default::default(),
            )
            .unwrap();
            est.l_g
        }),
    ] {
        let states = cli::trim_representation_floor(&run.states, &run.part);
        let rep = identity_suite(&states, &run.masses, &run.part, l_g, 400).unwrap();
        assert!(
            rep.schwarz_margin_focus < 1e-12 && rep.schwarz_margin_global < 1e-12,
            "{name}: Schwarz margins {:.2e} {:.2e}",
            rep.schwarz_margin_focus,
            rep.schwarz_margin_global
        );
        assert!(
            rep.sundman_ratio_focus >= 1.0 - 1e-12 && rep.sundman_ratio_global >= 1.0 - 1e-12,
            "{name}: Sundman ratios {} {}",
            rep.sundman_ratio_focus,
            rep.sundman_ratio_global
        );
        assert!(
            rep.mutual_distance_rel_err < 1e-12,
            "{name}: mutual-distance {:.2e}",
            rep.mutual_distance_rel_err
        );
        assert!(
            rep.mu_agreement_rel_err < 1e-10,
            "{name}: mu agreement {:.2e}",
            rep.mu_agreement_rel_err
        );
        assert!(
            rep.energy_chart_rel_err < 1e-10,
            "{name}: chart energy {:.2e}",
            rep.energy_chart_rel_err
        );
        assert!(
            rep.roundtrip_rel_err < 1e-12,
            "{name}: round trip {:.2e}",
            rep.roundtrip_rel_err
        );
        if rep.mu_agreement_rel_err > worst.0 {
            worst = (rep.mu_agreement_rel_err, name.to_string());
        }
    }
    println!(
        "criterion 4: PASS - worst mu agreement {:.2e} ({})",
        worst.0, worst.1
    );
}

/// Criterion 5: central-configuration solver on three and four equal masses.
#[test]
fn criterion_5_cc_solver() {
    let opts = CcSolveOptions {
        tol_factor: 1e-13,
        ..Default::default()
    };
    let catalog = enumerate_cc(&[1.0, 1.0, 1.0], 200, 42, true, &opts);
    assert_eq!(catalog.len(), 2, "equal-mass triple catalog size");
    let lagrange = catalog
        .iter()
        .find(|cc| (cc.lambda - 3.0).abs() < 1e-10)
        .expect("equilateral CC");
    let euler_lambda = 5.0 * 2f64.sqrt() / 2.0;
    let euler = catalog
        .iter()
        .find(|cc| (cc.lambda - euler_lambda).abs() < 1e-10)
        .expect("collinear CC");
    assert!(lagrange.residual < 1e-12);
    assert!(euler.residual < 1e-12);
    // dedup idempotence: identical catalogs on a second run
    let again = enumerate_cc(&[1.0, 1.0, 1.0], 200, 42, true, &opts);
    assert_eq!(catalog.len(), again.len());
    for (a, b) in catalog.iter().zip(&again) {
        assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
    }
    // four equal masses include the square (lambda = 4 sqrt(2) + 2 at I = 1)
    let four = enumerate_cc(&[1.0, 1.0, 1.0, 1.0], 400, 11, true, &opts);
    let square_lambda = 4.0 * 2f64.sqrt() + 2.0;
    let square = four
        .iter()
        .find(|cc| (cc.lambda - square_lambda).abs() < 1e-8)
        .expect("square CC");
    assert!(square.residual < 1e-10, "square residual {}", square.residual);
    println!(
        "criterion 5: PASS - lambda residuals {:.1e}/{:.1e}, square residual {:.1e}",
        (lagrange.lambda - 3.0).abs(),
        (euler.lambda - euler_lambda).abs(),
        square.residual
    );
}

/// Criterion 6: isolating segments: exact linear case, perturbed threshold,
/// and the blow-up field near the equal-mass equilateral restpoint with the
/// perturbation envelope recorded from a shooting run.
#[test]
fn criterion_6_isolating_segments() {
    // exact saddle: margins match the closed forms to 1e-12
    let sc = SegmentScenario {
        schema: 1,
        case: "linear_saddle".into(),
        ball_radius: 1.0,
        tube_radius: Some(0.25),
        gamma: Some(-0.5),
        delta_a: None,
        delta_alpha: None,
        horizon: 6.0,
        time_slices: 16,
        sphere_samples: 64,
    };
    let saddle = linear_saddle_case(false, &sc).unwrap();
    assert!(saddle.report.verified);
    for &(t, exit, entry) in &saddle.report.margin_series {
        let expect_exit = 2.0 * 0.25 * 0.25 * 1.5 * (-t).exp();
        let expect_entry = -2.0 * 0.25 * 0.25 * 0.5 * (-t).exp();
        assert!(
            (exit - expect_exit).abs() <= 1e-12 * expect_exit.abs().max(1e-12),
            "exit margin {exit} vs closed form {expect_exit}"
        );
        assert!(
            (entry - expect_entry).abs() <= 1e-12 * expect_entry.abs().max(1e-12),
            "entry margin {entry} vs closed form {expect_entry}"
        );
    }

    // perturbed saddle: the verification threshold lands on the prediction
    let sc_p = SegmentScenario {
        schema: 1,
        case: "linear_saddle_perturbed".into(),
        ball_radius: 1.0,
        tube_radius: Some(0.05),
        gamma: Some(-0.5),
        delta_a: Some(1.0),
        delta_alpha: Some(-2.0),
        horizon: 8.0,
        time_slices: 200,
        sphere_samples: 96,
    };
    let perturbed = linear_saddle_case(true, &sc_p).unwrap();
    assert!(perturbed.report.verified);
    let grid = 8.0 / 199.0;
    let predicted = perturbed.report.t_thresholds.1;
    let mut flip = f64::NAN;
    for &(t, _, entry) in &perturbed.report.margin_series {
        if entry >= 0.0 {
            flip = t;
        }
    }
    assert!(
        (flip - predicted).abs() <= grid + 1e-9,
        "entry flip at {flip}, predicted {predicted}"
    );

    // blow-up field near the Lagrange restpoint, with the delta envelope
    // fitted from the recorded shooting run
    let run = shot_dd();
    let (_, _, decay) = analyzed(run, None);
    let delta_v = decay
        .terms
        .iter()
        .find(|t| t.name == "delta_v")
        .expect("recorded delta_v fit");
    assert!(delta_v.decaying);
    // scale the recorded envelope into the segment ball
    let sc_blow = SegmentScenario {
        schema: 1,
        case: "blowup_lagrange".into(),
        ball_radius: 1e-2,
        tube_radius: None,
        gamma: None,
        delta_a: Some((delta_v.amplitude * 1e-4).min(1e-5)),
        delta_alpha: Some(-delta_v.rate),
        horizon: 8.0,
        time_slices: 64,
        sphere_samples: 256,
    };
    let blow = lagrange_segment_case(&sc_blow).unwrap();
    assert!(blow.cone_condition, "cone condition at R = 1e-2");
    assert!(blow.report.verified, "blow-up segment not verified");
    println!(
        "criterion 6: PASS - saddle exact, threshold {:.3} vs {:.3}, restpoint mu {:.3} xi {:.3} verified",
        flip, predicted, blow.mu_arrow, blow.xi_arrow
    );
}

/// Criterion 7: shadowing witness: the shot binary's (r, v) projection
/// approaches an exact autonomous collapse orbit exponentially, and the spin
/// integral tail halves at least geometrically per tau-doubling.
#[test]
fn criterion_7_shadowing_and_spin() {
    let run = shot_dd();
    let (series, _, _) = analyzed(run, None);

    // perturbed projection (tau, [r, v])
    let perturbed: Vec<(f64, DVector<f64>)> = (0..series.tau.len())
        .map(|i| (series.tau[i], DVector::from_vec(vec![series.r[i], series.v[i]])))
        .collect();

    // reference: exact autonomous pair collapse from rest (r' = vr,
    // v' = v^2/2 - V), an orbit of the unperturbed blow-up field
    let field = AutonomousField::new(&[1.0, 1.0]);
    let cfg = IntegratorConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        dense: false,
        ..Default::default()
    };
    let y0 = field.pack(0.6, 0.0, &[], &[]);
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| field.eval(y, dy).expect("pair field");
    let mut events = vec![collapse_lab::odeint::EventFn::<f64> {
        name: "deep".into(),
        g: Box::new(|_t, y: &[f64]| y[0] - 1e-12),
        direction: collapse_lab::odeint::Crossing::Falling,
        stop: true,
    }];
    let (ref_traj, _) = integrate(&mut rhs, 0.0, &y0, 200.0, &cfg, &mut events).unwrap();
    let reference_raw: Vec<(f64, DVector<f64>)> = ref_traj
        .t
        .iter()
        .zip(&ref_traj.y)
        .map(|(&t, y)| (t, DVector::from_vec(vec![y[0], y[1]])))
        .collect();

    // match the reference to the perturbed orbit at a late clean anchor by
    // the time shift and the r-scaling symmetry of the autonomous system
    let anchor = perturbed
        .iter()
        .position(|(_, z)| z[0] < 1e-4 * run.initial_r_g)
        .unwrap_or(perturbed.len() - 1);
    let (tau_a, za) = &perturbed[anchor];
    let v_a = za[1];
    let idx_ref = reference_raw
        .iter()
        .position(|(_, z)| z[1] <= v_a)
        .expect("reference covers the anchor velocity");
    let (tau_r, zr) = &reference_raw[idx_ref];
    let scale = za[0] / zr[0];
    let shift = tau_a - tau_r;
    let reference: Vec<(f64, DVector<f64>)> = reference_raw
        .iter()
        .map(|(t, z)| (t + shift, DVector::from_vec(vec![scale * z[0], z[1]])))
        .collect();

    // fitted log-distance slope over the stretch before the anchor
    let (_, dist_series) = shadow_distance(&perturbed[..=anchor], &reference, 0.0).unwrap();
    let lo = tau_a - 6.0;
    let hi = tau_a - 0.5;
    let mut taus = Vec::new();
    let mut ds = Vec::new();
    for &(t, d) in &dist_series {
        if t >= lo && t <= hi && d > 0.0 {
            taus.push(t);
            ds.push(d);
        }
    }
    assert!(taus.len() > 30, "only {} distance samples", taus.len());
    let (_, gamma0) = fit_exponential(&taus, &ds).unwrap();
    assert!(gamma0 < -0.5, "log-distance slope {gamma0}");

    // finiteness witness at gamma0/2: the weighted distance decays net
    let gamma_half = gamma0 / 2.0;
    let (sup_ratio, _) = shadow_distance(&perturbed[..=anchor], &reference, gamma_half).unwrap();
    assert!(sup_ratio.is_finite());
    let first = dist_series
        .iter()
        .find(|&&(t, _)| t >= lo)
        .map(|&(t, d)| d * (-gamma_half * t).exp())
        .unwrap();
    let last = dist_series
        .iter()
        .rev()
        .find(|&&(t, d)| t <= hi && d > 0.0)
        .map(|&(t, d)| d * (-gamma_half * t).exp())
        .unwrap();
    assert!(
        last < first,
        "no net decay at gamma0/2: first {first:.3e} last {last:.3e}"
    );

    // spin tail: S(tau_max) - S(tau_max/2) shrinks at least 2x per doubling
    let spin = cli::spin_analysis(&series, "shot");
    assert!(
        spin.geometric_decay,
        "spin tails {:?}",
        spin.halving_tails
    );
    println!(
        "criterion 7: PASS - gamma0 {:.3}, sup ratio {:.3e} at gamma0/2, spin tail geometric",
        gamma0, sup_ratio
    );
}

/// Criterion 8: integrator baseline: long-run energy drift, reversibility,
/// and the dense-output refinement bound.
#[test]
fn criterion_8_integrator_baseline() {
    // circular two-body orbit over 100 periods at rel_tol 1e-12
    let masses = MassSystem::new(vec![1.0, 1.0]).unwrap();
    let state = State::new(
        0.0,
        vec![Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)],
        vec![Vec2::new(0.0, 0.5), Vec2::new(0.0, -0.5)],
    );
    let cfg = IntegratorConfig {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        dense: false,
        ..Default::default()
    };
    let ms = masses.masses().to_vec();
    let mut rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| newton_rhs(&ms, y, dy);
    let period = 4.0 * std::f64::consts::PI;
    let y0 = state.to_flat();
    let energy = |y: &[f64]| {
        let s = State::from_flat(0.0, y);
        0.5 * (s.qdot[0].norm_sq() + s.qdot[1].norm_sq()) - 1.0 / (s.q[0] - s.q[1]).norm()
    };
    let (traj, yf) = integrate(&mut rhs, 0.0, &y0, 100.0 * period, &cfg, &mut []).unwrap();
    assert!(matches!(traj.outcome, collapse_lab::odeint::Outcome::ReachedEnd));
    let drift = ((energy(&yf) - energy(&y0)) / energy(&y0)).abs();
    assert!(drift < 1e-9, "energy drift {drift:.3e} over 100 periods");

    // reversibility within 100x tolerance
    let ms2 = masses.masses().to_vec();
    let mut rhs2 = move |_t: f64, y: &[f64], dy: &mut [f64]| newton_rhs(&ms2, y, dy);
    let (_, y1) = integrate(&mut rhs2, 0.0, &y0, period, &cfg, &mut []).unwrap();
    let (_, y2) = integrate(&mut rhs2, period, &y1, 0.0, &cfg, &mut []).unwrap();
    let mut rev_err: f64 = 0.0;
    for (a, b) in y0.iter().zip(&y2) {
        rev_err = rev_err.max((a - b).abs() / (1.0 + a.abs()));
    }
    assert!(rev_err < 100.0 * 1e-12, "reversibility error {rev_err:.3e}");

    // dense output against a tiny-tolerance mid-step reference
    let ms3 = masses.masses().to_vec();
    let mut rhs3 = move |_t: f64, y: &[f64], dy: &mut [f64]| newton_rhs(&ms3, y, dy);
    let cfg_dense = IntegratorConfig {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        ..Default::default()
    };
    let (traj, _) = integrate(&mut rhs3, 0.0, &y0, period, &cfg_dense, &mut []).unwrap();
    let mut worst = 0.0f64;
    for seg in traj.dense.iter().step_by(traj.dense.len() / 20 + 1) {
        let mut mid = vec![0.0; 4 * 2];
        seg.eval(0.5, &mut mid);
        let y_seg: Vec<f64> = seg.y0.clone();
        let ms4 = masses.masses().to_vec();
        let mut rhs4 = move |_t: f64, y: &[f64], dy: &mut [f64]| newton_rhs(&ms4, y, dy);
        let cfg_ref = IntegratorConfig {
            rel_tol: 1e-14,
            abs_tol: 1e-15,
            dense: false,
            ..Default::default()
        };
        let (_, y_ref) = integrate(
            &mut rhs4,
            seg.t0,
            &y_seg,
            seg.t0 + seg.h / 2.0,
            &cfg_ref,
            &mut [],
        )
        .unwrap();
        for i in 0..mid.len() {
            let tol = cfg_dense.abs_tol + cfg_dense.rel_tol * y_ref[i].abs();
            let err = (mid[i] - y_ref[i]).abs();
            worst = worst.max(err / tol);
        }
    }
    assert!(worst < 10.0, "dense refinement error {worst:.2} x local tolerance");
    println!(
        "criterion 8: PASS - drift {:.2e}, reversibility {:.2e}, dense {:.2}x tol",
        drift, rev_err, worst
    );
}
