//! Collision asymptotics: estimating the collision time and point, fitting
//! power laws and exponential rates, and verifying the quantitative laws a
//! collapsing cluster must obey.
//!
//! All time derivatives of the cluster moment J are evaluated from analytic
//! state contractions (velocity and force sums), never by differencing the
//! sampled series: the terminal window spans many decades and differencing
//! across it is hopeless. The one deliberate exception is the
//! Lagrange-Jacobi residual check, whose whole point is an independent
//! second derivative; it differences the analytic first derivative inside a
//! single dense-output segment with Richardson refinement.

use crate::blowup::{mcgehee_observables, FullField, TauQuadrature};
use crate::error::{Error, Result};
use crate::jacobi::{jacobi_forward, jacobi_velocity};
use crate::nbody::{
    self, cluster_observables, ClusterPartition, MassSystem, State,
};
use crate::odeint::Trajectory;
use crate::shape::ShapeContext;
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Collision time and point.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TlEstimate {
    pub t_est: f64,
    pub l_g: Vec2,
    pub t_uncertainty: f64,
    /// A^{3/4} slope of the r^{3/2} fit (size amplitude of the collapse).
    pub a_hat: f64,
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    /// Decades of r above the terminal sample excluded from the fit window.
    pub skip_decades: f64,
    /// Width of the fit window in decades of r.
    pub span_decades: f64,
    pub iterations: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            skip_decades: 1.0,
            span_decades: 2.0,
            iterations: 3,
        }
    }
}

fn linear_t_fit(t: &[f64], r: &[f64], window: &[usize]) -> (f64, f64, f64) {
    let mut sw = 0.0;
    let mut swt = 0.0;
    let mut swy = 0.0;
    for &i in window {
        let y = r[i].powf(1.5);
        let w = 1.0 / (y * y);
        sw += w;
        swt += w * t[i];
        swy += w * y;
    }
    let tbar = swt / sw;
    let ybar = swy / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &i in window {
        let y = r[i].powf(1.5);
        let w = 1.0 / (y * y);
        sxx += w * (t[i] - tbar) * (t[i] - tbar);
        sxy += w * (t[i] - tbar) * (y - ybar);
    }
    let slope = sxy / sxx;
    let a34 = -slope;
    let t_est = tbar + ybar / a34;
    // weighted residuals are relative residuals of y
    let mut ss = 0.0;
    for &i in window {
        let y = r[i].powf(1.5);
        let e = (y - a34 * (t_est - t[i])) / y;
        ss += e * e;
    }
    let rel_rms = (ss / window.len() as f64).sqrt();
    (t_est, a34, rel_rms)
}

fn select_estimate_window(
    t: &[f64],
    r: &[f64],
    r_end: f64,
    r_start: f64,
    opts: &EstimateOptions,
) -> Result<Vec<usize>> {
    let n = t.len();
    let max_shift = ((r_start / r_end).log10() - opts.span_decades).floor() as i32;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for k in 0..max_shift.max(1) {
        let lo = r_end * 10f64.powf(opts.skip_decades + k as f64);
        let hi = lo * 10f64.powf(opts.span_decades);
        let window: Vec<usize> = (0..n).filter(|&i| r[i] >= lo && r[i] <= hi).collect();
        if window.len() < 10 {
            continue;
        }
        let (_, a34, rel_rms) = linear_t_fit(t, r, &window);
        if a34 <= 0.0 || a34.is_nan() {
            continue;
        }
        if rel_rms < 1e-3 {
            return Ok(window);
        }
        if best.as_ref().is_none_or(|(b, _)| rel_rms < *b) {
            best = Some((rel_rms, window));
        }
    }
    best.map(|(_, w)| w).ok_or_else(|| {
        Error::InsufficientWindow("no usable collapse window for the T fit".into())
    })
}

/// Estimate the collision time T and point L_G of a collapsing focus
/// cluster from the linear law r^{3/2} = A^{3/4} (T - t) on the terminal
/// window, then extrapolate the cluster center of mass to T.
pub fn estimate_t_l(
    states: &[State],
    masses: &MassSystem,
    part: &ClusterPartition,
    opts: &EstimateOptions,
) -> Result<TlEstimate> {
    let focus = part.focus();
    let n = states.len();
    if n < 20 {
        return Err(Error::InsufficientWindow("too few samples".into()));
    }
    let mut t = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for st in states {
        let (c_g, _) = nbody::center_of_mass(st, masses, focus);
        let i0: f64 = focus
            .iter()
            .map(|&i| masses.mass(i) * (st.q[i] - c_g).norm_sq())
            .sum();
        t.push(st.t);
        r.push(i0.sqrt());
        c.push(c_g);
    }
    let r_end = r.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_start = r.iter().cloned().fold(0.0f64, f64::max);
    if r_start / r_end < 10f64.powf(opts.skip_decades + opts.span_decades) {
        return Err(Error::InsufficientWindow(format!(
            "cluster size spans only {:.2} decades",
            (r_start / r_end).log10()
        )));
    }

    // choose the deepest window whose linear fit is residual-clean; very
    // deep samples of a double-downcast run carry pure representation noise
    // and betray themselves through large relative residuals
    let window = select_estimate_window(&t, &r, r_end, r_start, opts)?;

    let mut window = window;
    let mut t_est = 0.0;
    let mut a34 = 0.0;
    let mut rel_rms = 0.0;
    for _ in 0..opts.iterations {
        let (te, a, rms) = linear_t_fit(&t, &r, &window);
        if a <= 0.0 || a.is_nan() {
            return Err(Error::InsufficientWindow(
                "cluster size is not collapsing over the window".into(),
            ));
        }
        t_est = te;
        a34 = a;
        rel_rms = rms;
        // re-select the same decade band in sigma = T - t
        let sigma_lo = window
            .iter()
            .map(|&i| t_est - t[i])
            .fold(f64::INFINITY, f64::min)
            .max(1e-300);
        let shi = sigma_lo * 10f64.powf(1.5 * opts.span_decades);
        let reselected: Vec<usize> = (0..n)
            .filter(|&i| {
                let s = t_est - t[i];
                s >= sigma_lo && s <= shi
            })
            .collect();
        if reselected.len() >= 10 {
            window = reselected;
        }
    }
    // uncertainty from the relative residual scatter over the window span
    let span: f64 = {
        let smin = window.iter().map(|&i| t_est - t[i]).fold(f64::INFINITY, f64::min);
        let smax = window.iter().map(|&i| t_est - t[i]).fold(0.0f64, f64::max);
        smax - smin
    };
    let se_t = rel_rms * span / (window.len() as f64).sqrt();

    // L_G: linear extrapolation of c_G in sigma to sigma = 0
    let mut l_g = Vec2::ZERO;
    for comp in 0..2 {
        let get = |v: Vec2| if comp == 0 { v.x } else { v.y };
        let m = window.len() as f64;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for &i in &window {
            sx += t_est - t[i];
            sy += get(c[i]);
        }
        let xbar = sx / m;
        let ybar = sy / m;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for &i in &window {
            let x = t_est - t[i] - xbar;
            sxx += x * x;
            sxy += x * (get(c[i]) - ybar);
        }
        let slope = sxy / sxx;
        let val = ybar - slope * xbar;
        if comp == 0 {
            l_g.x = val;
        } else {
            l_g.y = val;
        }
    }
    Ok(TlEstimate {
        t_est,
        l_g,
        t_uncertainty: se_t,
        a_hat: a34,
    })
}

// ---------------------------------------------------------------------------
// Power-law fit.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub constant: f64,
    /// (sigma_min, sigma_max) actually used.
    pub window: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
}

/// Least squares of log y against log (T - t) over a sigma window.
pub fn fit_power(
    t: &[f64],
    y: &[f64],
    t_est: f64,
    window: (f64, f64),
) -> Result<PowerLawFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        let sigma = t_est - ti;
        if sigma >= window.0 && sigma <= window.1 && yi > 0.0 {
            xs.push(sigma.ln());
            ys.push(yi.ln());
        }
    }
    if xs.len() < 10 {
        return Err(Error::InsufficientWindow(format!(
            "only {} positive points in the fit window",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, yv) in xs.iter().zip(&ys) {
        sxx += (x - xbar) * (x - xbar);
        sxy += (x - xbar) * (yv - ybar);
        syy += (yv - ybar) * (yv - ybar);
    }
    if sxx == 0.0 {
        return Err(Error::FitFailed("degenerate abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).min(1.0)
    };
    Ok(PowerLawFit {
        exponent: slope,
        constant: intercept.exp(),
        window,
        r_squared: r2,
        n_points: xs.len(),
    })
}

/// Least squares of log y against tau: returns (amplitude, rate) with
/// y ~ amplitude * exp(rate * tau).
pub fn fit_exponential(tau: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&xi, &yi) in tau.iter().zip(y) {
        if yi > 0.0 {
            xs.push(xi);
            ys.push(yi.ln());
        }
    }
    if xs.len() < 10 {
        return Err(Error::InsufficientWindow(
            "fewer than 10 positive points for the exponential fit".into(),
        ));
    }
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, yv) in xs.iter().zip(&ys) {
        sxx += (x - xbar) * (x - xbar);
        sxy += (x - xbar) * (yv - ybar);
    }
    let slope = sxy / sxx;
    Ok(((ybar - slope * xbar).exp(), slope))
}

// ---------------------------------------------------------------------------
// Per-sample collapse observables.
// ---------------------------------------------------------------------------

/// All scalar series the rate and decay verifiers need, extracted once.
#[derive(Debug, Clone)]
pub struct CollapseSeries {
    pub t: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub r: Vec<f64>,
    pub v: Vec<f64>,
    pub j: Vec<f64>,
    pub jdot: Vec<f64>,
    /// Second derivative through the Lagrange-Jacobi identity.
    pub jddot: Vec<f64>,
    pub u_g: Vec<f64>,
    pub k_g: Vec<f64>,
    pub h_g: Vec<f64>,
    pub mu: Vec<f64>,
    pub mudot: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub delta_w_norm: Vec<f64>,
    pub delta_theta: Vec<f64>,
    /// Norm of the rescaled-shape CC residual (2/9) m xi + grad U(xi).
    pub cc_residual: Vec<f64>,
    pub t_est: f64,
    pub l_g: Vec2,
    pub member_order: Vec<usize>,
}

impl CollapseSeries {
    /// Window on which |mu| still decays rather than sitting on its
    /// terminal residual floor. A shot orbit keeps the tiny angular momentum
    /// of its deepest pericenter forever, which would otherwise pollute the
    /// mu-rate and perturbation-decay fits. Returns `base` when mu carries
    /// no floor (isolated symmetric collapse).
    pub fn mu_valid_window(&self, base: (f64, f64)) -> (f64, f64) {
        let sigma_min = self.sigma.iter().cloned().fold(f64::INFINITY, f64::min);
        let sigma_start = self.sigma.first().copied().unwrap_or(0.0);
        // the floor is the terminal |mu| level (deepest decade median)
        let deep: Vec<f64> = self
            .sigma
            .iter()
            .zip(&self.mu)
            .filter(|(&s, _)| s <= sigma_min * 10.0)
            .map(|(_, m)| m.abs())
            .collect();
        if deep.is_empty() {
            return base;
        }
        let mut sorted = deep;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let floor = sorted[sorted.len() / 2];
        if floor < 1e-300 {
            return base;
        }
        let sigma_hi = sigma_start * 0.5;
        let mut sigma_lo = f64::INFINITY;
        for (&s, m) in self.sigma.iter().zip(&self.mu) {
            if s <= sigma_hi && m.abs() >= 30.0 * floor {
                sigma_lo = sigma_lo.min(s);
            }
        }
        if !sigma_lo.is_finite() || sigma_lo >= sigma_hi / 3.0 {
            // no decaying stretch visible above the floor
            return base;
        }
        (sigma_lo, sigma_hi)
    }

    /// Prefix of the series with sigma >= sigma_lo (toward the collision the
    /// series is ordered by decreasing sigma).
    pub fn truncate_below_sigma(&self, sigma_lo: f64) -> CollapseSeries {
        let keep: Vec<usize> = (0..self.sigma.len())
            .filter(|&i| self.sigma[i] >= sigma_lo)
            .collect();
        let pick = |v: &Vec<f64>| keep.iter().map(|&i| v[i]).collect();
        CollapseSeries {
            t: pick(&self.t),
            sigma: pick(&self.sigma),
            tau: pick(&self.tau),
            r: pick(&self.r),
            v: pick(&self.v),
            j: pick(&self.j),
            jdot: pick(&self.jdot),
            jddot: pick(&self.jddot),
            u_g: pick(&self.u_g),
            k_g: pick(&self.k_g),
            h_g: pick(&self.h_g),
            mu: pick(&self.mu),
            mudot: pick(&self.mudot),
            theta: pick(&self.theta),
            theta_prime: pick(&self.theta_prime),
            delta_v: pick(&self.delta_v),
            delta_w_norm: pick(&self.delta_w_norm),
            delta_theta: pick(&self.delta_theta),
            cc_residual: pick(&self.cc_residual),
            t_est: self.t_est,
            l_g: self.l_g,
            member_order: self.member_order.clone(),
        }
    }
}

/// Extract every per-sample observable of a collapse run.
pub fn extract_collapse_series(
    states: &[State],
    masses: &MassSystem,
    part: &ClusterPartition,
    est: &TlEstimate,
) -> Result<CollapseSeries> {
    let blow = mcgehee_observables(
        states,
        masses,
        part,
        &TauQuadrature::PowerLaw { t_est: est.t_est },
    )?;
    // perturbation terms want the same chart order
    let perm_part = ClusterPartition::focus_with_rest(
        blow.member_order.clone(),
        masses.body_count(),
    )?;
    let full = FullField::new(masses, &perm_part);
    let focus = part.focus();
    let n = states.len();

    let mut out = CollapseSeries {
        t: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        j: Vec::with_capacity(n),
        jdot: Vec::with_capacity(n),
        jddot: Vec::with_capacity(n),
        u_g: Vec::with_capacity(n),
        k_g: Vec::with_capacity(n),
        h_g: Vec::with_capacity(n),
        mu: Vec::with_capacity(n),
        mudot: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        theta_prime: Vec::with_capacity(n),
        delta_v: Vec::with_capacity(n),
        delta_w_norm: Vec::with_capacity(n),
        delta_theta: Vec::with_capacity(n),
        cc_residual: Vec::with_capacity(n),
        t_est: est.t_est,
        l_g: est.l_g,
        member_order: blow.member_order.clone(),
    };

    for (st, smp) in states.iter().zip(&blow.samples) {
        let obs = cluster_observables(st, masses, part, Some(est.l_g))?;
        let sigma = est.t_est - st.t;
        let (j, jdot) = {
            let l = vec![est.l_g; focus.len()];
            nbody::j_about(st, masses, focus, &l)
        };
        let g = nbody::lagrange_jacobi_boundary_focus(st, masses, part, est.l_g)?;
        let jddot = 4.0 * obs.k_g - 2.0 * obs.u_g + g;
        // mudot: torque of the external gradient about the cluster center
        let grad_ext = nbody::u_ext_gradient(st, masses, part)?;
        let mudot: f64 = focus
            .iter()
            .zip(&grad_ext)
            .map(|(&i, ge)| ge.dot((st.q[i] - obs.c_g).perp()))
            .sum();
        // exact perturbation blocks at this state
        let chart = full.from_cartesian(st)?;
        let pert = full.perturbation_eval(&chart)?;
        // Rescaled-shape CC residual || (2/9) m xi + grad U(xi) ||, evaluated
        // at the best scale of xi = s (q - L)/||q - L||. The nominal scale
        // sigma^{2/3} would be exact, but it inherits the T-estimate and
        // f64-time resolution errors, which blow the residual up by
        // ~dT/sigma near the collision; the scale-minimized residual
        // isolates the actual shape deviation from the CC set.
        let ccr = if sigma > 0.0 && j > 0.0 {
            let jn = j.sqrt();
            let xi_hat: Vec<Vec2> = focus.iter().map(|&i| (st.q[i] - est.l_g) / jn).collect();
            let mut grad_hat = vec![Vec2::ZERO; focus.len()];
            for (a, &i) in focus.iter().enumerate() {
                for (b, &jx) in focus.iter().enumerate().skip(a + 1) {
                    let dvec = xi_hat[b] - xi_hat[a];
                    let d = dvec.norm();
                    let gg = dvec * (masses.mass(i) * masses.mass(jx) / (d * d * d));
                    grad_hat[a] += gg;
                    grad_hat[b] -= gg;
                }
            }
            // residual(s)^2 = A2 s^2 + 2 B / s + C2 / s^4 is minimized at a
            // closed-form root: quadratic in x = s^3
            let a2: f64 = focus
                .iter()
                .zip(&xi_hat)
                .map(|(&i, x)| {
                    let v = *x * (2.0 / 9.0 * masses.mass(i));
                    v.norm_sq()
                })
                .sum();
            let b_cross: f64 = focus
                .iter()
                .zip(&xi_hat)
                .zip(&grad_hat)
                .map(|((&i, x), g)| 2.0 / 9.0 * masses.mass(i) * x.dot(*g))
                .sum();
            let c2: f64 = grad_hat.iter().map(|g| g.norm_sq()).sum();
            let x = (b_cross + (b_cross * b_cross + 8.0 * a2 * c2).sqrt()) / (2.0 * a2);
            let s = x.cbrt();
            let mut acc = 0.0;
            for (a, &i) in focus.iter().enumerate() {
                let res = grad_hat[a] / (s * s) + xi_hat[a] * (2.0 / 9.0 * masses.mass(i) * s);
                acc += res.norm_sq();
            }
            acc.sqrt()
        } else {
            f64::NAN
        };

        out.t.push(st.t);
        out.sigma.push(sigma);
        out.tau.push(smp.tau);
        out.r.push(smp.r);
        out.v.push(smp.v);
        out.j.push(j);
        out.jdot.push(jdot);
        out.jddot.push(jddot);
        out.u_g.push(obs.u_g);
        out.k_g.push(obs.k_g);
        out.h_g.push(obs.h_g);
        out.mu.push(obs.mu0_g);
        out.mudot.push(mudot);
        out.theta.push(smp.theta);
        out.theta_prime.push(smp.theta_prime);
        out.delta_v.push(pert.delta_v.abs());
        out.delta_w_norm.push(if pert.delta_w.is_empty() {
            0.0
        } else {
            pert.delta_w.norm()
        });
        out.delta_theta.push(pert.delta_theta.abs());
        out.cc_residual.push(ccr);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Collision-rate verification.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioCheck {
    pub name: String,
    /// Expected limit as a multiple of A (NaN when no closed form applies).
    pub expected_factor_of_a: f64,
    /// Robust limit over the deepest part of the window.
    pub achieved: f64,
    /// Max relative excursion of the ratio from `achieved` over the window.
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub a_hat: f64,
    pub ratio_checks: Vec<RatioCheck>,
    pub h_g_limit: f64,
    pub h_g_oscillation: f64,
    /// sup |mu| / sigma^{7/3} over the window.
    pub mu_bound: f64,
    /// sup |mudot| / sigma^{4/3} over the window.
    pub mudot_bound: f64,
    /// Fitted exponent of J against sigma over the window.
    pub j_exponent: f64,
    /// Fitted exponent of |mu| against sigma (NaN when mu is identically 0),
    /// over the floor-limited mu window.
    pub mu_exponent: f64,
    pub mudot_exponent: f64,
    /// Sub-window actually used for the mu bound and exponent.
    pub mu_window: (f64, f64),
    /// Fitted slope of log r against tau.
    pub r_tau_slope: f64,
    /// Envelope of local slopes of log r vs tau: r decays between
    /// exp(-e2 tau) and exp(-e1 tau) rates.
    pub e1: f64,
    pub e2: f64,
    /// Terminal blow-up velocity v (should approach -(2/3) A^{3/4}).
    pub v_terminal: f64,
    /// Integral of |theta'| over the last decade of the tau window.
    pub spin_tail: f64,
    pub spin_total: f64,
    pub cc_residual_tail: f64,
    pub window: (f64, f64),
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

fn window_indices(sigma: &[f64], window: (f64, f64)) -> Vec<usize> {
    (0..sigma.len())
        .filter(|&i| sigma[i] >= window.0 && sigma[i] <= window.1)
        .collect()
}

/// Verify every asymptotic law of the collapse over a sigma window.
pub fn verify_collision_rates(
    series: &CollapseSeries,
    window: (f64, f64),
) -> Result<RateReport> {
    let idx = window_indices(&series.sigma, window);
    if idx.len() < 30 {
        return Err(Error::InsufficientWindow(format!(
            "{} samples in the rate window",
            idx.len()
        )));
    }
    // deepest half-decade of the window gives the limit estimates
    let deep: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&i| series.sigma[i] <= window.0 * 10f64.powf(0.5))
        .collect();
    let deep = if deep.len() >= 5 { deep } else { idx.clone() };

    let ratio = |name: &str, factor: f64, values: &dyn Fn(usize) -> f64| -> RatioCheck {
        let mut deep_vals: Vec<f64> = deep.iter().map(|&i| values(i)).collect();
        let achieved = median(&mut deep_vals);
        let deviation = idx
            .iter()
            .map(|&i| (values(i) / achieved - 1.0).abs())
            .fold(0.0f64, f64::max);
        RatioCheck {
            name: name.into(),
            expected_factor_of_a: factor,
            achieved,
            deviation,
        }
    };

    let s43 = |i: usize| series.sigma[i].powf(4.0 / 3.0);
    let s13 = |i: usize| series.sigma[i].powf(1.0 / 3.0);
    let s23 = |i: usize| series.sigma[i].powf(2.0 / 3.0);

    let checks = vec![
        ratio("J/sigma^(4/3)", 1.0, &|i| series.j[i] / s43(i)),
        ratio("Jdot/sigma^(1/3)", -4.0 / 3.0, &|i| series.jdot[i] / s13(i)),
        ratio("Jddot*sigma^(2/3)", 4.0 / 9.0, &|i| series.jddot[i] * s23(i)),
        ratio("U*sigma^(2/3)", 2.0 / 9.0, &|i| series.u_g[i] * s23(i)),
        ratio("K*sigma^(2/3)", 2.0 / 9.0, &|i| series.k_g[i] * s23(i)),
    ];
    let a_hat = checks[0].achieved;

    // H_G limit and oscillation over the deepest decade of the window
    let last_decade: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&i| series.sigma[i] <= window.0 * 10.0)
        .collect();
    let last_decade = if last_decade.len() >= 5 {
        last_decade
    } else {
        idx.clone()
    };
    let mut h_vals: Vec<f64> = last_decade.iter().map(|&i| series.h_g[i]).collect();
    let h_min = h_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let h_max = h_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let h_g_limit = median(&mut h_vals);
    let h_g_oscillation = h_max - h_min;

    // angular momentum bounds and exponents over the floor-limited window
    let mu_window = series.mu_valid_window(window);
    let mu_idx = window_indices(&series.sigma, mu_window);
    let mu_bound = mu_idx
        .iter()
        .map(|&i| series.mu[i].abs() / series.sigma[i].powf(7.0 / 3.0))
        .fold(0.0f64, f64::max);
    let mudot_bound = idx
        .iter()
        .map(|&i| series.mudot[i].abs() / s43(i))
        .fold(0.0f64, f64::max);
    let mu_abs: Vec<f64> = series.mu.iter().map(|m| m.abs()).collect();
    let mudot_abs: Vec<f64> = series.mudot.iter().map(|m| m.abs()).collect();
    let mu_scale = mu_idx.iter().map(|&i| mu_abs[i]).fold(0.0f64, f64::max);
    let mu_exponent = if mu_scale > 1e-20 {
        fit_power(&series.t, &mu_abs, series.t_est, mu_window)
            .map(|f| f.exponent)
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let mudot_scale = idx.iter().map(|&i| mudot_abs[i]).fold(0.0f64, f64::max);
    let mudot_exponent = if mudot_scale > 1e-20 {
        fit_power(&series.t, &mudot_abs, series.t_est, window)
            .map(|f| f.exponent)
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let j_exponent = fit_power(&series.t, &series.j, series.t_est, window)
        .map(|f| f.exponent)
        .unwrap_or(f64::NAN);

    // log r against tau: global slope plus the local-slope envelope
    let (r_tau_slope, e1, e2) = {
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        let n = idx.len() as f64;
        let xbar = idx.iter().map(|&i| series.tau[i]).sum::<f64>() / n;
        let ybar = idx.iter().map(|&i| series.r[i].ln()).sum::<f64>() / n;
        for &i in &idx {
            let x = series.tau[i] - xbar;
            sxx += x * x;
            sxy += x * (series.r[i].ln() - ybar);
        }
        let slope = sxy / sxx;
        // local slopes over ~half-decade batches of sigma
        let mut locals = Vec::new();
        let mut batch: Vec<usize> = Vec::new();
        let mut batch_edge = series.sigma[idx[0]];
        for &i in &idx {
            if series.sigma[i] < batch_edge / 10f64.powf(0.5) {
                if batch.len() >= 4 {
                    locals.push(local_slope(series, &batch));
                }
                batch.clear();
                batch_edge = series.sigma[i];
            }
            batch.push(i);
        }
        if batch.len() >= 4 {
            locals.push(local_slope(series, &batch));
        }
        let e2 = locals.iter().map(|s| s.abs()).fold(0.0f64, f64::max);
        let e1 = locals
            .iter()
            .map(|s| s.abs())
            .fold(f64::INFINITY, f64::min);
        (slope, e1, e2)
    };

    let v_terminal = *deep
        .iter()
        .map(|&i| &series.v[i])
        .next_back()
        .unwrap_or(&f64::NAN);

    // spin profile confined to the stretch where mu is physical
    let mu_win_for_spin = series.mu_valid_window(window);
    let spin_series = series.truncate_below_sigma(mu_win_for_spin.0.min(window.0));
    let spin = spin_profile(&spin_series);
    let spin_total = spin.last().map(|&(_, s)| s).unwrap_or(0.0);
    let tau_max = spin.last().map(|&(t, _)| t).unwrap_or(0.0);
    let spin_tail = spin_tail_over(&spin, tau_max - (10f64).ln() / e1.max(1e-10));

    // terminal CC residual: median over the deepest half-decade
    let mut ccr: Vec<f64> = deep
        .iter()
        .map(|&i| series.cc_residual[i])
        .filter(|v| v.is_finite())
        .collect();
    let cc_residual_tail = median(&mut ccr);

    Ok(RateReport {
        a_hat,
        ratio_checks: checks,
        h_g_limit,
        h_g_oscillation,
        mu_bound,
        mudot_bound,
        j_exponent,
        mu_exponent,
        mudot_exponent,
        mu_window,
        r_tau_slope,
        e1,
        e2,
        v_terminal,
        spin_tail,
        spin_total,
        cc_residual_tail,
        window,
    })
}

fn local_slope(series: &CollapseSeries, batch: &[usize]) -> f64 {
    let n = batch.len() as f64;
    let xbar = batch.iter().map(|&i| series.tau[i]).sum::<f64>() / n;
    let ybar = batch.iter().map(|&i| series.r[i].ln()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &i in batch {
        let x = series.tau[i] - xbar;
        sxx += x * x;
        sxy += x * (series.r[i].ln() - ybar);
    }
    sxy / sxx
}

/// Cumulative integral of |theta'| d tau (trapezoid on the tau grid).
pub fn spin_profile(series: &CollapseSeries) -> Vec<(f64, f64)> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(series.tau.len());
    out.push((series.tau[0], 0.0));
    for i in 1..series.tau.len() {
        let dt = series.tau[i] - series.tau[i - 1];
        acc += 0.5 * (series.theta_prime[i].abs() + series.theta_prime[i - 1].abs()) * dt;
        out.push((series.tau[i], acc));
    }
    out
}

/// S(tau_max) - S(tau_from): the remaining spin beyond tau_from.
pub fn spin_tail_over(profile: &[(f64, f64)], tau_from: f64) -> f64 {
    let total = profile.last().map(|&(_, s)| s).unwrap_or(0.0);
    let at = profile
        .iter()
        .find(|&&(t, _)| t >= tau_from)
        .map(|&(_, s)| s)
        .unwrap_or(total);
    total - at
}

// ---------------------------------------------------------------------------
// Perturbation decay verification.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub name: String,
    pub amplitude: f64,
    /// Positive decay rate E with the term ~ C e^{-E tau}.
    pub rate: f64,
    pub decaying: bool,
    /// Ratio of this term's log-tau slope to the log r slope.
    pub slope_ratio_vs_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub terms: Vec<DecayFit>,
    pub exact_zero: bool,
    pub all_decaying: bool,
    pub r_slope: f64,
}

/// Fit the exponential decay of each perturbation block. Every block
/// carries angular-momentum terms, so the fits run over the window on which
/// mu is above its terminal residual floor (the whole window when mu is
/// identically zero).
pub fn verify_perturbation_decay(
    series: &CollapseSeries,
    window: (f64, f64),
) -> Result<DecayReport> {
    let mu_window = series.mu_valid_window(window);
    let idx = window_indices(&series.sigma, mu_window);
    if idx.len() < 20 {
        return Err(Error::InsufficientWindow(
            "too few samples for decay fits".into(),
        ));
    }
    let tau_span = series.tau[*idx.last().unwrap()] - series.tau[idx[0]];
    if tau_span < 1.5 {
        return Err(Error::InsufficientWindow(format!(
            "tau window spans only {tau_span:.2}"
        )));
    }
    let tau: Vec<f64> = idx.iter().map(|&i| series.tau[i]).collect();
    let r: Vec<f64> = idx.iter().map(|&i| series.r[i]).collect();
    let (_, r_slope) = fit_exponential(&tau, &r)?;
    let mu_idx = idx.clone();

    let sup_all = idx
        .iter()
        .map(|&i| {
            series.delta_v[i]
                .max(series.delta_w_norm[i])
                .max(series.delta_theta[i])
        })
        .fold(0.0f64, f64::max);
    if sup_all < 1e-20 {
        return Ok(DecayReport {
            terms: Vec::new(),
            exact_zero: true,
            all_decaying: true,
            r_slope,
        });
    }

    let mut terms = Vec::new();
    let mut all_decaying = true;
    let named: [(&str, &Vec<f64>); 3] = [
        ("delta_v", &series.delta_v),
        ("delta_w", &series.delta_w_norm),
        ("delta_theta", &series.delta_theta),
    ];
    for (name, values) in named {
        let fit_idx: &Vec<usize> = if name == "delta_theta" { &mu_idx } else { &idx };
        let sup = fit_idx.iter().map(|&i| values[i]).fold(0.0f64, f64::max);
        if sup < 1e-20 {
            continue; // identically absent block (e.g. w for a pair)
        }
        let ys: Vec<f64> = fit_idx.iter().map(|&i| values[i]).collect();
        let tau_fit: Vec<f64> = fit_idx.iter().map(|&i| series.tau[i]).collect();
        let (amplitude, slope) = fit_exponential(&tau_fit, &ys)?;
        let decaying = slope < 0.0;
        all_decaying &= decaying;
        terms.push(DecayFit {
            name: name.into(),
            amplitude,
            rate: -slope,
            decaying,
            slope_ratio_vs_r: slope / r_slope,
        });
    }
    Ok(DecayReport {
        terms,
        exact_zero: false,
        all_decaying,
        r_slope,
    })
}

// ---------------------------------------------------------------------------
// Identity suite: pointwise inequalities and cross-formula agreements.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    /// max over samples of (Jdot^2/4 - 2JK)/(2JK), positive means violation.
    pub schwarz_margin_focus: f64,
    pub schwarz_margin_global: f64,
    /// min over samples of sqrt(J) U / D (must stay >= 1).
    pub sundman_ratio_focus: f64,
    pub sundman_ratio_global: f64,
    pub mutual_distance_rel_err: f64,
    pub mu_agreement_rel_err: f64,
    pub energy_chart_rel_err: f64,
    pub roundtrip_rel_err: f64,
    pub samples_checked: usize,
}

/// Check the pointwise identities on (a subsample of) a trajectory's states.
/// `l_g` is the collision point of the focus cluster; the global moments use
/// it for focus members and each body's own final position otherwise.
pub fn identity_suite(
    states: &[State],
    masses: &MassSystem,
    part: &ClusterPartition,
    l_g: Vec2,
    max_samples: usize,
) -> Result<IdentityReport> {
    let focus = part.focus();
    let n_bodies = masses.body_count();
    let last = states.last().unwrap();
    let l_global: Vec<Vec2> = (0..n_bodies)
        .map(|i| {
            if focus.contains(&i) {
                l_g
            } else {
                last.q[i]
            }
        })
        .collect();
    let all: Vec<usize> = (0..n_bodies).collect();
    let d_focus = nbody::sundman_constant(masses, part, focus);
    let d_global = nbody::sundman_constant(masses, part, &all);
    let cluster_masses: Vec<f64> = focus.iter().map(|&i| masses.mass(i)).collect();
    let ctx = ShapeContext::new(&cluster_masses);

    let stride = (states.len() / max_samples.max(1)).max(1);
    let mut rep = IdentityReport {
        schwarz_margin_focus: f64::NEG_INFINITY,
        schwarz_margin_global: f64::NEG_INFINITY,
        sundman_ratio_focus: f64::INFINITY,
        sundman_ratio_global: f64::INFINITY,
        mutual_distance_rel_err: 0.0,
        mu_agreement_rel_err: 0.0,
        energy_chart_rel_err: 0.0,
        roundtrip_rel_err: 0.0,
        samples_checked: 0,
    };

    for st in states.iter().step_by(stride) {
        let obs = cluster_observables(st, masses, part, Some(l_g))?;
        // Schwarz and Sundman for the focus cluster
        {
            let l = vec![l_g; focus.len()];
            let (j, jdot) = nbody::j_about(st, masses, focus, &l);
            let k = obs.k_g;
            rep.schwarz_margin_focus = rep
                .schwarz_margin_focus
                .max((jdot * jdot / 4.0 - 2.0 * j * k) / (2.0 * j * k));
            rep.sundman_ratio_focus = rep.sundman_ratio_focus.min(j.sqrt() * obs.u_g / d_focus);
        }
        // and for all bodies
        {
            let (j, jdot) = nbody::j_about(st, masses, &all, &l_global);
            let k = nbody::kinetic_energy(st, masses, &all);
            let u = nbody::potential_of(st, masses, &all)?;
            rep.schwarz_margin_global = rep
                .schwarz_margin_global
                .max((jdot * jdot / 4.0 - 2.0 * j * k) / (2.0 * j * k));
            rep.sundman_ratio_global = rep.sundman_ratio_global.min(j.sqrt() * u / d_global);
        }
        // mutual-distance identity
        {
            let l = vec![l_g; focus.len()];
            let (j, _) = nbody::j_about(st, masses, focus, &l);
            let j2 = nbody::j_mutual_distance_form(st, masses, focus, l_g);
            rep.mutual_distance_rel_err = rep.mutual_distance_rel_err.max((j - j2).abs() / j);
        }
        // mu three ways plus the chart energy and the coordinate round trip
        {
            let q: Vec<Vec2> = focus.iter().map(|&i| st.q[i]).collect();
            let qdot: Vec<Vec2> = focus.iter().map(|&i| st.qdot[i]).collect();
            let frame = jacobi_forward(&q, &cluster_masses);
            let (zdot, cdot_g) = jacobi_velocity(&qdot, &cluster_masses);
            let shape = ctx.shape_velocity(&frame, &zdot)?;
            // The three formulas contract different products: the ambient
            // form sums m q x qdot of near-cancelling O(|q||qdot|) terms, so
            // agreement can only be meaningful relative to that ambient
            // scale (near a deep collision |mu| itself collapses to zero
            // while the summands do not).
            let scale: f64 = focus
                .iter()
                .map(|&i| masses.mass(i) * st.q[i].norm() * st.qdot[i].norm())
                .sum::<f64>()
                .max(1e-300);
            let d1 = (shape.mu - obs.mu).abs();
            let d2 = (obs.mu - obs.mu0_g).abs();
            rep.mu_agreement_rel_err = rep
                .mu_agreement_rel_err
                .max(d1.max(d2) / obs.mu.abs().max(scale));
            let h_chart = ctx.energy_shape(&shape, cdot_g)?;
            rep.energy_chart_rel_err = rep
                .energy_chart_rel_err
                .max((h_chart - obs.h_g).abs() / obs.h_g.abs().max(obs.k_g));
            // round trip through the chart
            let z_back = ctx.z_from_chart(shape.r, shape.theta, &shape.s);
            let q_back = crate::jacobi::jacobi_positions(&cluster_masses, &z_back, frame.z_k);
            let mut err: f64 = 0.0;
            for (a, &i) in focus.iter().enumerate() {
                err = err.max((q_back[a] - st.q[i]).norm() / (1.0 + st.q[i].norm()));
            }
            rep.roundtrip_rel_err = rep.roundtrip_rel_err.max(err);
        }
        rep.samples_checked += 1;
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Lagrange-Jacobi residual (independent second-derivative check).
// ---------------------------------------------------------------------------

pub enum JMoment {
    /// J of the focus cluster about the collision point.
    Focus { l_g: Vec2 },
    /// J of all bodies about per-body limit points.
    Global { l: Vec<Vec2> },
}

/// Sup over the window of |Jddot_fd - (4K - 2U + g)| where Jddot_fd comes
/// from Richardson-refined central differences of the analytic first
/// derivative evaluated on the dense output, inside single segments.
/// Returns (sup residual, sup |Jddot|) for relative comparisons.
pub fn lagrange_jacobi_residual(
    traj: &Trajectory,
    masses: &MassSystem,
    part: &ClusterPartition,
    kind: &JMoment,
    window: (f64, f64),
    max_samples: usize,
) -> Result<(f64, f64)> {
    if traj.dense.is_empty() {
        return Err(Error::InsufficientWindow(
            "trajectory has no dense output".into(),
        ));
    }
    let focus = part.focus();
    let all: Vec<usize> = (0..masses.body_count()).collect();
    let (members, l): (Vec<usize>, Vec<Vec2>) = match kind {
        JMoment::Focus { l_g } => (focus.to_vec(), vec![*l_g; focus.len()]),
        JMoment::Global { l } => (all.clone(), l.clone()),
    };
    let jdot_at = |y: &[f64]| -> f64 {
        let st = State::from_flat(0.0, y);
        nbody::j_about(&st, masses, &members, &l).1
    };
    let segs: Vec<&crate::odeint::DenseSegment> = traj
        .dense
        .iter()
        .filter(|seg| {
            let tc = seg.t0 + seg.h / 2.0;
            tc >= window.0 && tc <= window.1
        })
        .collect();
    if segs.len() < 3 {
        return Err(Error::InsufficientWindow(
            "window too short for finite differencing".into(),
        ));
    }
    let stride = (segs.len() / max_samples.max(1)).max(1);
    let mut sup_res: f64 = 0.0;
    let mut sup_jdd: f64 = 0.0;
    let dim = traj.dim();
    let mut buf = vec![0.0; dim];
    for seg in segs.iter().step_by(stride) {
        let eval_jdot = |s: f64, buf: &mut [f64]| -> f64 {
            seg.eval(s, buf);
            jdot_at(buf)
        };
        // Richardson on central differences at the segment midpoint
        let h1 = 0.125;
        let h2 = 0.0625;
        let d1 = (eval_jdot(0.5 + h1, &mut buf) - eval_jdot(0.5 - h1, &mut buf))
            / (2.0 * h1 * seg.h);
        let d2 = (eval_jdot(0.5 + h2, &mut buf) - eval_jdot(0.5 - h2, &mut buf))
            / (2.0 * h2 * seg.h);
        let jddot_fd = (4.0 * d2 - d1) / 3.0;
        // identity value at the midpoint
        seg.eval(0.5, &mut buf);
        let st = State::from_flat(seg.t0 + seg.h / 2.0, &buf);
        let k = nbody::kinetic_energy(&st, masses, &members);
        let u = nbody::potential_of(&st, masses, &members)?;
        let g = match kind {
            JMoment::Focus { l_g } => {
                nbody::lagrange_jacobi_boundary_focus(&st, masses, part, *l_g)?
            }
            JMoment::Global { l } => {
                nbody::lagrange_jacobi_boundary_global(&st, masses, part, l)?
            }
        };
        let identity = 4.0 * k - 2.0 * u + g;
        sup_res = sup_res.max((jddot_fd - identity).abs());
        sup_jdd = sup_jdd.max(jddot_fd.abs());
    }
    Ok((sup_res, sup_jdd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_recovers_t() {
        // r = 2 (T - t)^{2/3} with T = 5
        let t_true = 5.0;
        let mut states = Vec::new();
        let n = 4000;
        for i in 0..n {
            let frac = i as f64 / (n - 1) as f64;
            let sigma = 5.0 * 10f64.powf(-8.0 * frac);
            let t = t_true - sigma;
            let r = 2.0 * sigma.powf(2.0 / 3.0);
            let d = r * 2f64.sqrt();
            states.push(State::new(
                t,
                vec![Vec2::new(-d / 2.0, 0.0), Vec2::new(d / 2.0, 0.0)],
                vec![Vec2::ZERO, Vec2::ZERO],
            ));
        }
        let masses = MassSystem::new(vec![1.0, 1.0]).unwrap();
        let part = ClusterPartition::focus_with_rest(vec![0, 1], 2).unwrap();
        let est = estimate_t_l(&states, &masses, &part, &EstimateOptions::default()).unwrap();
        assert!(
            (est.t_est - t_true).abs() < 1e-10,
            "T_est {} (err {:.2e})",
            est.t_est,
            est.t_est - t_true
        );
        assert!(est.l_g.norm() < 1e-10);
        // a_hat is A^{3/4} with A = 2^2 = 4 here
        assert!((est.a_hat - 4f64.powf(0.75)).abs() < 1e-8);
    }

    #[test]
    fn fit_power_exact_and_constant() {
        let t_est = 1.0;
        let t: Vec<f64> = (0..200)
            .map(|i| t_est - 10f64.powf(-1.0 - 4.0 * i as f64 / 199.0))
            .collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&ti| 3.0 * (t_est - ti).powf(4.0 / 3.0))
            .collect();
        let fit = fit_power(&t, &y, t_est, (1e-5, 1e-1)).unwrap();
        assert!((fit.exponent - 4.0 / 3.0).abs() < 1e-12);
        assert!((fit.constant - 3.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        // constant series
        let c: Vec<f64> = t.iter().map(|_| 2.5).collect();
        let fit = fit_power(&t, &c, t_est, (1e-5, 1e-1)).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
    }

    #[test]
    fn fit_power_with_noise_monte_carlo() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let t_est = 1.0;
        let t: Vec<f64> = (0..300)
            .map(|i| t_est - 10f64.powf(-1.0 - 4.0 * i as f64 / 299.0))
            .collect();
        for seed in 0..100u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = t
                .iter()
                .map(|&ti| {
                    let noise = 1.0 + 0.01 * rng.gen_range(-1.0..1.0);
                    1.7 * (t_est - ti).powf(1.25) * noise
                })
                .collect();
            let fit = fit_power(&t, &y, t_est, (1e-5, 1e-1)).unwrap();
            assert!(
                (fit.exponent - 1.25).abs() < 0.02,
                "seed {seed}: exponent {}",
                fit.exponent
            );
        }
    }

    #[test]
    fn fit_power_needs_ten_points() {
        let t = vec![0.0, 0.1, 0.2];
        let y = vec![1.0, 2.0, 3.0];
        assert!(fit_power(&t, &y, 1.0, (1e-3, 1.0)).is_err());
    }

    #[test]
    fn synthetic_exponential_rate() {
        let tau: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = tau.iter().map(|&x| (-2.0 * x).exp()).collect();
        let (_, rate) = fit_exponential(&tau, &y).unwrap();
        assert!((rate + 2.0).abs() < 1e-6);
    }
}
