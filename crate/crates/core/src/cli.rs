//! Scenario-driven front end: the library functions behind the thin binary.
//!
//! Each runner is a pure function from a parsed configuration to
//! serializable reports, so the examples and the acceptance tests drive the
//! same code paths as the command line.

use crate::asymptotics::{
    estimate_t_l, extract_collapse_series, spin_profile, spin_tail_over,
    verify_collision_rates, verify_perturbation_decay, CollapseSeries, DecayReport,
    EstimateOptions, RateReport, TlEstimate,
};
use crate::blowup::AutonomousField;
use crate::cc::{enumerate_cc, CcCatalog, CcSolveOptions};
use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::nbody::{ClusterPartition, MassSystem, State};
use crate::odeint::{
    integrate, integrate_to_collision, shoot_to_collision, IntegratorConfig, Outcome,
    ShootOptions, Trajectory,
};
use crate::real::Real;
use crate::scenario::{Precision, ResolvedScenario, Scenario};
use crate::segment::{
    cone_constants, verify_segment, ConeOptions, DeltaModel, SegmentReport,
    SegmentSpec,
};
use crate::vec2::Vec2;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

// ---------------------------------------------------------------------------
// Simulation driver.
// ---------------------------------------------------------------------------

pub struct SimOutputs {
    pub states: Vec<State>,
    pub traj: Trajectory,
    pub estimate: TlEstimate,
    pub initial_r_g: f64,
    pub terminal_r_g: f64,
    pub shoot_param: Option<f64>,
    pub shoot_bisections: Option<usize>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub status: String,
    pub name: String,
    pub masses: Vec<f64>,
    pub cluster: Vec<usize>,
    pub t_est: f64,
    pub t_uncertainty: f64,
    pub l_g: [f64; 2],
    pub initial_r_g: f64,
    pub terminal_r_g: f64,
    pub outcome: String,
    pub shoot_param: Option<f64>,
    pub shoot_bisections: Option<usize>,
    pub samples: usize,
    pub precision: Precision,
    pub seed: u64,
}

fn integrator_config(r: &ResolvedScenario) -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: r.integrator.rel_tol,
        abs_tol: r.integrator.abs_tol,
        max_step: r.integrator.max_step.unwrap_or(f64::INFINITY),
        initial_step: None,
        max_steps: 20_000_000,
        dense: true,
    }
}

fn run_integration<S: Real>(r: &ResolvedScenario) -> Result<SimOutputs> {
    let cfg = integrator_config(r);
    let (run, shoot_param, shoot_bisections) = match (&r.shoot, &r.family) {
        (Some(sh), Some(family)) => {
            let opts = ShootOptions {
                target_fraction: sh.target_fraction,
                t_max: r.integrator.t_max,
                max_bisections: 120,
            };
            let result = shoot_to_collision::<S>(
                family,
                (sh.param_min, sh.param_max),
                &r.masses,
                &r.part,
                &cfg,
                &opts,
            )?;
            (result.run, Some(result.param), Some(result.bisections))
        }
        _ => {
            let run = integrate_to_collision::<S>(
                &r.state,
                &r.masses,
                &r.part,
                &cfg,
                r.integrator.stop_fraction,
                r.integrator.t_max,
            )?;
            (run, None, None)
        }
    };
    let states: Vec<State> = run
        .traj
        .t
        .iter()
        .zip(&run.traj.y)
        .map(|(&t, y)| State::from_flat(t, y))
        .collect();
    let terminal_r_g = crate::odeint::terminal_r_g(&run, &r.masses, &r.part);
    let estimate = estimate_t_l(&states, &r.masses, &r.part, &EstimateOptions::default())?;
    Ok(SimOutputs {
        states,
        traj: run.traj,
        estimate,
        initial_r_g: run.initial_cluster_size,
        terminal_r_g,
        shoot_param,
        shoot_bisections,
        outcome: Outcome::ReachedEnd,
    })
}

/// Run the scenario's collision integration in the configured precision.
pub fn simulate(r: &ResolvedScenario, precision: Option<Precision>) -> Result<SimOutputs> {
    let precision = precision.unwrap_or(r.integrator.precision);
    let mut out = match precision {
        Precision::Double => run_integration::<f64>(r)?,
        Precision::Dd => run_integration::<Dd>(r)?,
    };
    out.outcome = out.traj.outcome.clone();
    Ok(out)
}

pub fn summary_of(
    r: &ResolvedScenario,
    sim: &SimOutputs,
    precision: Option<Precision>,
) -> SimulateSummary {
    SimulateSummary {
        status: "ok".into(),
        name: r.name.clone(),
        masses: r.masses.masses().to_vec(),
        cluster: r.part.focus().to_vec(),
        t_est: sim.estimate.t_est,
        t_uncertainty: sim.estimate.t_uncertainty,
        l_g: [sim.estimate.l_g.x, sim.estimate.l_g.y],
        initial_r_g: sim.initial_r_g,
        terminal_r_g: sim.terminal_r_g,
        outcome: format!("{:?}", sim.outcome),
        shoot_param: sim.shoot_param,
        shoot_bisections: sim.shoot_bisections,
        samples: sim.states.len(),
        precision: precision.unwrap_or(r.integrator.precision),
        seed: r.seed,
    }
}

// ---------------------------------------------------------------------------
// Trajectory CSV.
// ---------------------------------------------------------------------------

/// CSV emission: fixed column schema, shortest round-trip decimal formatting
/// (Rust's default float Display) so downstream fits are bit-stable.
pub fn trajectory_csv(states: &[State], series: &CollapseSeries) -> String {
    let n = states.first().map_or(0, |s| s.q.len());
    let mut out = String::new();
    out.push_str("t,tau");
    for i in 0..n {
        let _ = write!(out, ",q{i}x,q{i}y");
    }
    for i in 0..n {
        let _ = write!(out, ",v{i}x,v{i}y");
    }
    out.push_str(",r_g,v,theta,mu,u_g,k_g,h_g,j_g\n");
    for (k, st) in states.iter().enumerate() {
        let _ = write!(out, "{},{}", st.t, series.tau[k]);
        for q in &st.q {
            let _ = write!(out, ",{},{}", q.x, q.y);
        }
        for v in &st.qdot {
            let _ = write!(out, ",{},{}", v.x, v.y);
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{},{},{}",
            series.r[k],
            series.v[k],
            series.theta[k],
            series.mu[k],
            series.u_g[k],
            series.k_g[k],
            series.h_g[k],
            series.j[k]
        );
    }
    out
}

/// Parse the trajectory CSV back into states (inverse of `trajectory_csv`).
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<State>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config {
        field: "csv".into(),
        message: "empty trajectory file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with('q') && c.ends_with('x')).count();
    if n == 0 {
        return Err(Error::Config {
            field: "csv".into(),
            message: "no position columns found".into(),
        });
    }
    let mut states = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize| -> Result<f64> {
            fields
                .get(idx)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config {
                    field: format!("csv line {}", lineno + 2),
                    message: format!("bad field {idx}"),
                })
        };
        let t = parse(0)?;
        let mut q = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            q.push(Vec2::new(parse(2 + 2 * i)?, parse(3 + 2 * i)?));
        }
        for i in 0..n {
            v.push(Vec2::new(parse(2 + 2 * n + 2 * i)?, parse(3 + 2 * n + 2 * i)?));
        }
        states.push(State::new(t, q, v));
    }
    Ok(states)
}

// ---------------------------------------------------------------------------
// Command implementations.
// ---------------------------------------------------------------------------

pub struct CommonFlags {
    pub out_dir: Option<std::path::PathBuf>,
    pub precision: Option<Precision>,
    pub seed: Option<u64>,
}

fn apply_overrides(scenario: &mut Scenario, flags: &CommonFlags) {
    if let Some(seed) = flags.seed {
        scenario.seed = Some(seed);
    }
    if let Some(p) = flags.precision {
        scenario.integrator.precision = p;
    }
}

fn write_out(dir: &Option<std::path::PathBuf>, name: &str, content: &str) -> Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), content)?;
    }
    Ok(())
}

/// `simulate`: run the scenario, write the trajectory CSV and summary JSON.
pub fn cmd_simulate(config_path: &Path, flags: &CommonFlags) -> Result<SimulateSummary> {
    let text = std::fs::read_to_string(config_path)?;
    let mut scenario = crate::scenario::parse_scenario(&text)?;
    apply_overrides(&mut scenario, flags);
    let resolved = scenario.resolve()?;
    let sim = simulate(&resolved, flags.precision)?;
    let csv_states = trim_representation_floor(&sim.states, &resolved.part);
    let series =
        extract_collapse_series(&csv_states, &resolved.masses, &resolved.part, &sim.estimate)?;
    let summary = summary_of(&resolved, &sim, flags.precision);
    write_out(
        &flags.out_dir,
        &format!("{}_trajectory.csv", resolved.name),
        &trajectory_csv(&csv_states, &series),
    )?;
    write_out(
        &flags.out_dir,
        &format!("{}_summary.json", resolved.name),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatesOutput {
    pub summary: SimulateSummary,
    pub rates: RateReport,
    pub decay: DecayReport,
}

/// Default rate window: [1e-8, 1e-4] scaled by the collapse time scale of
/// the initial cluster size, clamped into the actually integrated range.
pub fn default_rate_window(initial_r_g: f64, sigma_end: f64, sigma_start: f64) -> (f64, f64) {
    let scale = initial_r_g.powf(1.5);
    let lo = (1e-8 * scale).max(sigma_end * 1.5);
    let hi = (1e-4 * scale).min(sigma_start * 0.5).max(lo * 100.0);
    (lo, hi)
}

/// Drop terminal samples whose relative cluster geometry is below the f64
/// representation floor (a deep double-double run downcast to f64 keeps its
/// absolute positions but loses the tiny differences).
pub fn trim_representation_floor(states: &[State], part: &ClusterPartition) -> Vec<State> {
    let focus = part.focus();
    let scale = states
        .first()
        .map(|s| s.q.iter().map(|q| q.norm()).fold(1.0f64, f64::max))
        .unwrap_or(1.0);
    let floor = 1e-11 * scale;
    states
        .iter()
        .filter(|s| s.min_pair_distance(focus) >= floor)
        .cloned()
        .collect()
}

pub fn rates_from_states(
    states: &[State],
    masses: &MassSystem,
    part: &ClusterPartition,
    window: Option<(f64, f64)>,
    initial_r_g: f64,
) -> Result<(TlEstimate, CollapseSeries, RateReport, DecayReport)> {
    let states = &trim_representation_floor(states, part)[..];
    let est = estimate_t_l(states, masses, part, &EstimateOptions::default())?;
    let series = extract_collapse_series(states, masses, part, &est)?;
    let sigma_end = est.t_est - states.last().unwrap().t;
    let sigma_start = est.t_est - states[0].t;
    let window = window.unwrap_or_else(|| default_rate_window(initial_r_g, sigma_end, sigma_start));
    let rates = verify_collision_rates(&series, window)?;
    let decay = verify_perturbation_decay(&series, window)?;
    Ok((est, series, rates, decay))
}

/// `rates`: simulate (or load a trajectory) and verify the collision laws.
pub fn cmd_rates(
    config_path: Option<&Path>,
    traj_path: Option<&Path>,
    summary_path: Option<&Path>,
    flags: &CommonFlags,
) -> Result<RatesOutput> {
    let (states, masses, part, name, initial_r_g, summary) = match (config_path, traj_path) {
        (Some(cfg), None) => {
            let text = std::fs::read_to_string(cfg)?;
            let mut scenario = crate::scenario::parse_scenario(&text)?;
            apply_overrides(&mut scenario, flags);
            let resolved = scenario.resolve()?;
            let sim = simulate(&resolved, flags.precision)?;
            let summary = summary_of(&resolved, &sim, flags.precision);
            (
                sim.states,
                resolved.masses.clone(),
                resolved.part.clone(),
                resolved.name.clone(),
                sim.initial_r_g,
                summary,
            )
        }
        (None, Some(tp)) => {
            let sp = summary_path.ok_or_else(|| Error::Config {
                field: "summary".into(),
                message: "--traj needs --summary for masses and cluster".into(),
            })?;
            let summary: SimulateSummary =
                serde_json::from_str(&std::fs::read_to_string(sp)?)?;
            let states = parse_trajectory_csv(&std::fs::read_to_string(tp)?)?;
            let masses = MassSystem::new(summary.masses.clone())?;
            let part =
                ClusterPartition::focus_with_rest(summary.cluster.clone(), summary.masses.len())?;
            let r0 = summary.initial_r_g;
            let name = summary.name.clone();
            (states, masses, part, name, r0, summary)
        }
        _ => {
            return Err(Error::Config {
                field: "config".into(),
                message: "rates needs exactly one of --config or --traj".into(),
            })
        }
    };
    let window = None; // default window from the run scale
    let (_, _, rates, decay) = rates_from_states(&states, &masses, &part, window, initial_r_g)?;
    let output = RatesOutput {
        summary,
        rates,
        decay,
    };
    print_rates_table(&output.rates, &output.decay);
    write_out(
        &flags.out_dir,
        &format!("{name}_rates.json"),
        &serde_json::to_string_pretty(&output)?,
    )?;
    Ok(output)
}

pub fn print_rates_table(rates: &RateReport, decay: &DecayReport) {
    println!("collision-rate checks over sigma in [{:.3e}, {:.3e}]:", rates.window.0, rates.window.1);
    println!("  A_hat = {:.9}", rates.a_hat);
    for c in &rates.ratio_checks {
        println!(
            "  {:<20} achieved {:+.9e}  expected {:+.3} A  deviation {:.3e}",
            c.name, c.achieved, c.expected_factor_of_a, c.deviation
        );
    }
    println!(
        "  H_G limit {:+.9e}  oscillation {:.3e}",
        rates.h_g_limit, rates.h_g_oscillation
    );
    println!(
        "  sup |mu|/sigma^(7/3) = {:.6e} (exponent {:.3})",
        rates.mu_bound, rates.mu_exponent
    );
    println!(
        "  sup |mudot|/sigma^(4/3) = {:.6e} (exponent {:.3})",
        rates.mudot_bound, rates.mudot_exponent
    );
    println!(
        "  log r vs tau slope {:.6} (local envelope [{:.6}, {:.6}])",
        rates.r_tau_slope, rates.e1, rates.e2
    );
    println!(
        "  v terminal {:.6}, spin tail {:.3e}, cc residual tail {:.3e}",
        rates.v_terminal, rates.spin_tail, rates.cc_residual_tail
    );
    if decay.exact_zero {
        println!("  perturbations identically zero (isolated cluster)");
    } else {
        for t in &decay.terms {
            println!(
                "  {:<12} ~ {:.3e} exp(-{:.4} tau)  decaying: {}  slope/r-slope: {:.3}",
                t.name, t.amplitude, t.rate, t.decaying, t.slope_ratio_vs_r
            );
        }
    }
}

/// `cc`: enumerate central configurations and print the multiplier table.
pub fn cmd_cc(
    masses: &[f64],
    multistart: usize,
    flags: &CommonFlags,
) -> Result<CcCatalog> {
    let seed = flags.seed.unwrap_or(0);
    let opts = CcSolveOptions::default();
    let entries = enumerate_cc(masses, multistart, seed, true, &opts);
    let catalog = CcCatalog {
        masses: masses.to_vec(),
        entries,
    };
    println!("central configurations for masses {masses:?}:");
    println!(
        "{:>4} {:>14} {:>12} {:>11} {:>9} {:>9}",
        "#", "lambda", "residual", "degenerate", "isolated", "iters"
    );
    for (i, cc) in catalog.entries.iter().enumerate() {
        println!(
            "{:>4} {:>14.9} {:>12.3e} {:>11} {:>9} {:>9}",
            i, cc.lambda, cc.residual, cc.degenerate, cc.isolated, cc.newton_iterations
        );
    }
    write_out(&flags.out_dir, "cc_catalog.json", &catalog.to_json()?)?;
    Ok(catalog)
}

// ---------------------------------------------------------------------------
// Segment cases.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentScenario {
    pub schema: u32,
    pub case: String,
    #[serde(default = "default_ball_radius")]
    pub ball_radius: f64,
    #[serde(default)]
    pub tube_radius: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub delta_a: Option<f64>,
    #[serde(default)]
    pub delta_alpha: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_slices")]
    pub time_slices: usize,
    #[serde(default = "default_sphere")]
    pub sphere_samples: usize,
}

fn default_ball_radius() -> f64 {
    1e-2
}
fn default_horizon() -> f64 {
    8.0
}
fn default_slices() -> usize {
    64
}
fn default_sphere() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentOutput {
    pub case: String,
    pub mu_arrow: f64,
    pub xi_arrow: f64,
    pub cone_condition: bool,
    pub u_dim: usize,
    pub s_dim: usize,
    pub gamma: f64,
    pub report: SegmentReport,
}

/// The saddle self-test cases on x' = x, y' = -y.
pub fn linear_saddle_case(perturbed: bool, sc: &SegmentScenario) -> Result<SegmentOutput> {
    let field = |z: &DVector<f64>| DVector::from_vec(vec![z[0], -z[1]]);
    let center = DVector::zeros(2);
    let cone = cone_constants(&field, &center, 1.0, &ConeOptions::default())?;
    let gamma = sc.gamma.unwrap_or(-0.5);
    let (a, alpha) = if perturbed {
        (sc.delta_a.unwrap_or(1.0), sc.delta_alpha.unwrap_or(-2.0))
    } else {
        (0.0, sc.delta_alpha.unwrap_or(-2.0))
    };
    let t1 = sc.horizon;
    let delta = if perturbed {
        let series: Vec<(f64, DVector<f64>)> = (0..1000)
            .map(|i| {
                let t = t1 * i as f64 / 999.0;
                (t, DVector::from_vec(vec![0.0, a * (alpha * t).exp()]))
            })
            .collect();
        DeltaModel::Series(series)
    } else {
        DeltaModel::Zero
    };
    let spec = SegmentSpec {
        z_p: vec![(0.0, DVector::zeros(2)), (t1, DVector::zeros(2))],
        radius: sc.tube_radius.unwrap_or(0.05),
        gamma,
        t0: 0.0,
        t1,
        delta_bound: (a, alpha),
        delta,
        time_slices: sc.time_slices,
        sphere_samples: sc.sphere_samples,
        seed: 7,
    };
    let report = verify_segment(&spec, &cone, &field)?;
    Ok(SegmentOutput {
        case: if perturbed {
            "linear_saddle_perturbed".into()
        } else {
            "linear_saddle".into()
        },
        mu_arrow: cone.mu_arrow,
        xi_arrow: cone.xi_arrow,
        cone_condition: cone.cone_condition,
        u_dim: cone.u_dim,
        s_dim: cone.s_dim,
        gamma,
        report,
    })
}

/// The equal-mass triple's equilateral shape in the default chart.
pub fn lagrange_restpoint_shape() -> Vec<Vec2> {
    vec![Vec2::new(0.0, -2.0 / 3f64.sqrt())]
}

/// Cone constants and an isolating segment around a manufactured perturbed
/// orbit of the blow-up field near the Lagrange restpoint.
///
/// The perturbation envelope (a, alpha) is an input: pass the fitted values
/// recorded from a shooting run. Returns the cone data, the chosen gamma,
/// and the segment report.
pub fn lagrange_segment_case(sc: &SegmentScenario) -> Result<SegmentOutput> {
    let field_def = AutonomousField::new(&[1.0, 1.0, 1.0]);
    let s_star = lagrange_restpoint_shape();
    let p_rest = field_def.equilibrium(&s_star, false)?;
    let center = DVector::from_vec(p_rest.clone());
    let field = move |z: &DVector<f64>| {
        let mut dy = vec![0.0; z.len()];
        let y: Vec<f64> = z.iter().cloned().collect();
        field_def
            .eval(&y, &mut dy)
            .expect("autonomous field eval in segment case");
        DVector::from_vec(dy)
    };
    let cone = cone_constants(&field, &center, sc.ball_radius, &ConeOptions::default())?;
    if !cone.cone_condition {
        return Err(Error::InvalidSegment(format!(
            "cone condition failed at the restpoint: mu {} xi {}",
            cone.mu_arrow, cone.xi_arrow
        )));
    }
    let a = sc.delta_a.unwrap_or(1e-5);
    let alpha = sc.delta_alpha.unwrap_or(-2.3);
    // gamma strictly between mu_arrow and min(0, xi_arrow), above alpha
    let gamma = sc.gamma.unwrap_or(0.5 * cone.mu_arrow.max(alpha));
    let t1 = sc.horizon;

    // Manufacture the perturbed orbit: start on the stable side of the
    // restpoint and inject delta(t) = a e^{alpha t} u(t) with a rotating
    // unit direction confined to the stable subspace. A perturbation with
    // unstable components would drive a generic orbit out of the ball; the
    // construction needs an orbit that stays, and the margin evaluation
    // uses the worst-case envelope over all directions either way.
    let s_dim = cone.s_dim;
    let u_dim = cone.u_dim;
    let stable_basis = cone.basis.columns(u_dim, s_dim).clone_owned();
    let dir_of = |t: f64| -> DVector<f64> {
        let mut ys = DVector::zeros(s_dim);
        for p in 0..s_dim {
            ys[p] = (1.3 * t + p as f64 * 2.0 * std::f64::consts::PI / s_dim as f64).cos();
        }
        let u = &stable_basis * ys;
        let norm = u.norm();
        u.scale(1.0 / norm)
    };
    // The restpoint is a strong saddle (unstable rate ~2.8 for equal
    // masses): quadratic coupling turns any offset eps into an escaping
    // unstable component ~eps^2 e^{lambda+ t}. The construction needs an
    // orbit that stays near the restpoint, so keep the seed offset tiny and
    // cap the certified horizon where the orbit leaves the inner ball.
    let z0 = {
        let col = cone.basis.column(cone.u_dim).clone_owned();
        &center + col.scale(sc.ball_radius * 1e-3)
    };
    let field_ref = &field;
    let mut rhs = move |t: f64, y: &[f64], dy: &mut [f64]| {
        let z = DVector::from_column_slice(y);
        let f = field_ref(&z);
        let u = dir_of(t);
        for p in 0..y.len() {
            dy[p] = f[p] + a * (alpha * t).exp() * u[p];
        }
    };
    let cfg = IntegratorConfig {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        dense: false,
        ..Default::default()
    };
    let y0: Vec<f64> = z0.iter().cloned().collect();
    let center_ev = center.clone();
    let escape = sc.ball_radius * 0.4;
    let mut events = vec![crate::odeint::EventFn::<f64> {
        name: "escape".into(),
        g: Box::new(move |_t, y: &[f64]| {
            escape - (DVector::from_column_slice(y) - &center_ev).norm()
        }),
        direction: crate::odeint::Crossing::Falling,
        stop: true,
    }];
    let (traj, _) = integrate(&mut rhs, 0.0, &y0, t1, &cfg, &mut events)?;
    let t1 = traj.last_t().min(t1) * 0.98;
    let z_p: Vec<(f64, DVector<f64>)> = traj
        .t
        .iter()
        .zip(&traj.y)
        .map(|(&t, y)| (t, DVector::from_column_slice(y)))
        .collect();

    let tube_radius = sc.tube_radius.unwrap_or(sc.ball_radius / 8.0);
    let spec = SegmentSpec {
        z_p,
        radius: tube_radius,
        gamma,
        t0: 0.0,
        t1,
        delta_bound: (a, alpha),
        delta: DeltaModel::Envelope,
        time_slices: sc.time_slices,
        sphere_samples: sc.sphere_samples,
        seed: 13,
    };
    let report = verify_segment(&spec, &cone, &field)?;
    Ok(SegmentOutput {
        case: "blowup_lagrange".into(),
        mu_arrow: cone.mu_arrow,
        xi_arrow: cone.xi_arrow,
        cone_condition: cone.cone_condition,
        u_dim: cone.u_dim,
        s_dim: cone.s_dim,
        gamma,
        report,
    })
}

/// `segment`: run one of the built-in segment-verification cases.
pub fn cmd_segment(config_path: &Path, flags: &CommonFlags) -> Result<SegmentOutput> {
    let text = std::fs::read_to_string(config_path)?;
    let sc: SegmentScenario = serde_json::from_str(&text).map_err(|e| Error::Config {
        field: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if sc.schema != crate::scenario::SCHEMA_VERSION {
        return Err(Error::Config {
            field: "schema".into(),
            message: "unsupported schema version".into(),
        });
    }
    let out = match sc.case.as_str() {
        "linear_saddle" => linear_saddle_case(false, &sc)?,
        "linear_saddle_perturbed" => linear_saddle_case(true, &sc)?,
        "blowup_lagrange" => lagrange_segment_case(&sc)?,
        other => {
            return Err(Error::Config {
                field: "case".into(),
                message: format!("unknown segment case `{other}`"),
            })
        }
    };
    println!(
        "segment case {}: cone condition {}, verified {}",
        out.case, out.cone_condition, out.report.verified
    );
    write_out(
        &flags.out_dir,
        &format!("segment_{}.json", out.case),
        &serde_json::to_string_pretty(&out)?,
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Spin analysis.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinOutput {
    pub name: String,
    pub tau_max: f64,
    pub spin_total: f64,
    /// Tail S(tau_max) - S(tau) at tau = tau_max/2, tau_max/4, ...
    pub halving_tails: Vec<(f64, f64)>,
    /// Each tail at tau_max / 2^k is at most half the one at tau_max/2^{k+1}.
    pub geometric_decay: bool,
}

pub fn spin_analysis(series: &CollapseSeries, name: &str) -> SpinOutput {
    // confine to the stretch where mu sits above its terminal residual floor
    let sigma_min = series.sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let mu_window = series.mu_valid_window((sigma_min, f64::INFINITY));
    // a finite upper end means a floor was detected and a decaying stretch found
    let truncate_at = if mu_window.1.is_finite() {
        mu_window.0
    } else {
        sigma_min
    };
    let series = &series.truncate_below_sigma(truncate_at);
    let profile = spin_profile(series);
    let tau_max = profile.last().map(|&(t, _)| t).unwrap_or(0.0);
    let spin_total = profile.last().map(|&(_, s)| s).unwrap_or(0.0);
    // tails T(tau_max / 2^{k+1}) = S(tau_max) - S(tau_max / 2^{k+1})
    let mut halving_tails = Vec::new();
    let mut f = 0.5;
    for _ in 0..6 {
        let tau_from = tau_max * f;
        halving_tails.push((tau_from, spin_tail_over(&profile, tau_from)));
        f *= 0.5;
    }
    // increments D_k = S(tau_max/2^k) - S(tau_max/2^{k+1}) must shrink by
    // at least 2x per doubling on the terminal (asymptotic) levels; early
    // levels sit in the pre-collapse transient and carry no claim
    let quad_tol = 1e-14 * (1.0 + spin_total.abs());
    let mut geometric = true;
    let mut prev_tail = 0.0;
    let mut increments = Vec::new();
    for &(_, tail) in &halving_tails {
        increments.push(tail - prev_tail);
        prev_tail = tail;
    }
    for k in 0..2.min(increments.len() - 1) {
        let inner = increments[k]; // closer to the collision
        let outer = increments[k + 1];
        if inner <= quad_tol && outer <= quad_tol {
            continue;
        }
        if inner > 0.5 * outer + quad_tol {
            geometric = false;
        }
    }
    SpinOutput {
        name: name.into(),
        tau_max,
        spin_total,
        halving_tails,
        geometric_decay: geometric,
    }
}

/// `spin`: spin-integral convergence table for a scenario or saved run.
pub fn cmd_spin(
    config_path: Option<&Path>,
    traj_path: Option<&Path>,
    summary_path: Option<&Path>,
    flags: &CommonFlags,
) -> Result<SpinOutput> {
    let (states, masses, part, name, _r0) = match (config_path, traj_path) {
        (Some(cfg), None) => {
            let text = std::fs::read_to_string(cfg)?;
            let mut scenario = crate::scenario::parse_scenario(&text)?;
            apply_overrides(&mut scenario, flags);
            let resolved = scenario.resolve()?;
            let sim = simulate(&resolved, flags.precision)?;
            (
                sim.states,
                resolved.masses.clone(),
                resolved.part.clone(),
                resolved.name.clone(),
                sim.initial_r_g,
            )
        }
        (None, Some(tp)) => {
            let sp = summary_path.ok_or_else(|| Error::Config {
                field: "summary".into(),
                message: "--traj needs --summary for masses and cluster".into(),
            })?;
            let summary: SimulateSummary =
                serde_json::from_str(&std::fs::read_to_string(sp)?)?;
            let states = parse_trajectory_csv(&std::fs::read_to_string(tp)?)?;
            let masses = MassSystem::new(summary.masses.clone())?;
            let part =
                ClusterPartition::focus_with_rest(summary.cluster.clone(), summary.masses.len())?;
            (states, masses, part, summary.name.clone(), summary.initial_r_g)
        }
        _ => {
            return Err(Error::Config {
                field: "config".into(),
                message: "spin needs exactly one of --config or --traj".into(),
            })
        }
    };
    let states = trim_representation_floor(&states, &part);
    let est = estimate_t_l(&states, &masses, &part, &EstimateOptions::default())?;
    let series = extract_collapse_series(&states, &masses, &part, &est)?;
    let out = spin_analysis(&series, &name);
    println!(
        "spin integral for {}: total {:.6e} over tau <= {:.3}",
        out.name, out.spin_total, out.tau_max
    );
    println!("{:>12} {:>16}", "tau from", "remaining spin");
    for (tau, tail) in &out.halving_tails {
        println!("{:>12.4} {:>16.6e}", tau, tail);
    }
    write_out(
        &flags.out_dir,
        &format!("{name}_spin.json"),
        &serde_json::to_string_pretty(&out)?,
    )?;
    Ok(out)
}
