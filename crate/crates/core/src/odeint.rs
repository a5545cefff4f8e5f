//! Adaptive embedded Runge-Kutta integration with continuous output and
//! event detection, generic over the working precision.
//!
//! The method is Verner's efficient 6(5) pair: 9 stages, FSAL, with a
//! 5th-order interpolant that needs one extra stage per accepted step.
//! Coefficients from Verner's published "RKV65.IIIXb.Efficient" tableau.

use crate::error::{Error, Result};
use crate::nbody::{
    cluster_i0, cluster_min_distance, cluster_mu0, newton_rhs, ClusterPartition, MassSystem, State,
};
use crate::real::Real;
use serde::{Deserialize, Serialize};

pub const STAGES: usize = 9;
pub const DENSE_STAGES: usize = 10;

#[rustfmt::skip]
const A: [[f64; STAGES]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.06, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.9239962962962962e-2, 7.669337037037037e-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.035975, 0.0, 0.107925, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.3186834152331484, 0.0, -5.042058063628562, 4.220674648395414, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-41.872591664327516, 0.0, 159.4325621631375, -122.11921356501003, 5.531743066200054, 0.0, 0.0, 0.0, 0.0],
    [-54.430156935316504, 0.0, 207.06725136501848, -158.61081378459, 6.991816585950242, -1.8597231062203234e-2, 0.0, 0.0, 0.0],
    [-54.66374178728198, 0.0, 207.95280625538936, -159.2889574744995, 7.018743740796944, -1.8338785905045722e-2, -5.119484997882099e-4, 0.0, 0.0],
    [3.438957868357036e-2, 0.0, 0.0, 0.2582624555633503, 0.4209371189673537, 4.40539646966931, -176.48311902429865, 172.36413340141507, 0.0],
];

#[rustfmt::skip]
const B_HIGH: [f64; STAGES] = [
    3.438957868357036e-2, 0.0, 0.0, 0.2582624555633503, 0.4209371189673537,
    4.40539646966931, -176.48311902429865, 172.36413340141507, 0.0,
];

#[rustfmt::skip]
const B_LOW: [f64; STAGES] = [
    4.90996764838249e-2, 0.0, 0.0, 0.22511122295165242, 0.4694682253029562,
    0.8065792249988868, 0.0, -0.607119489177796, 5.6861139440475696e-2,
];

#[rustfmt::skip]
const C: [f64; STAGES] = [
    0.0, 0.06, 9.593333333333333e-2, 0.1439, 0.4973, 0.9725, 0.9995, 1.0, 1.0,
];

/// Extra stage at c = 1/2 used only by the interpolant.
#[rustfmt::skip]
const A_DENSE: [f64; DENSE_STAGES] = [
    1.6524159013572806e-2, 0.0, 0.0, 0.3053128187514179, 0.2071200938201979,
    -1.293879140655123, 57.11988411588149, -55.87979207510932, 2.4830028297766014e-2, 0.0,
];

const C_DENSE: f64 = 0.5;

/// Interpolation weight polynomials: b_i(s) = s * (p[0] + s (p[1] + ...)).
#[rustfmt::skip]
const B_DENSE: [[f64; 6]; DENSE_STAGES] = [
    [1.0, -5.308169607103577, 10.18168044895868, -7.520036991611715, 0.9340485368631161, 0.746867191577065],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 6.272050253212501, -16.02618147467746, 12.844356324519618, -1.1487945044767591, -1.6831681430145498],
    [0.0, 6.876491702846304, -24.635767260846333, 33.21078648379717, -17.49461528263644, 2.4640414758066496],
    [0.0, -35.5444517105996, 165.7016170190242, -385.4635395491143, 442.43241370157017, -182.7206429912112],
    [0.0, 1918.6548566980114, -9268.121508966042, 20858.33702877255, -22645.82767158481, 8960.474176055992],
    [0.0, -1883.0698021327182, 9101.025187200634, -20473.188551959534, 22209.765551256532, -8782.1682509635],
    [0.0, 0.11902479635123643, -0.12502696705039376, 1.7799569193949991, -4.660932123043763, 2.886977374347921],
    [0.0, -8.0, 32.0, -40.0, 16.0, 0.0],
];

/// Integration settings. Tolerances must lie in (0, 1e-2].
///
/// The tableau coefficients are double-precision decimals, so the per-step
/// error cannot be driven below ~1e-16 relative even in double-double mode;
/// tolerances tighter than ~1e-15 only shrink steps without gaining
/// accuracy. Double-double integration instead removes the accumulation
/// rounding of long collision runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub dense: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 4_000_000,
            dense: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(Error::Config {
                    field: name.into(),
                    message: format!("tolerance must be in (0, 1e-2], got {v}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Crossing {
    Rising,
    Falling,
    Any,
}

/// Right-hand side of an ODE in working precision: rhs(t, y, dy_out).
pub type RhsFn<'a, S> = dyn FnMut(S, &[S], &mut [S]) + 'a;

/// Scalar event callback g(t, y).
pub type EventCallback<'a, S> = Box<dyn Fn(S, &[S]) -> S + 'a>;

/// Scalar event function g(t, y); a sign change of the requested direction
/// inside a step is refined on the interpolant to locate the crossing.
pub struct EventFn<'a, S: Real> {
    pub name: String,
    pub g: EventCallback<'a, S>,
    pub direction: Crossing,
    pub stop: bool,
}

/// Result of one integration: the trajectory plus the terminal state in
/// working precision.
pub type IntegrationResult<S> = Result<(Trajectory, Vec<S>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    ReachedEnd,
    Event { name: String, t: f64 },
    StepUnderflow { t: f64 },
    MaxSteps { t: f64 },
}

/// One accepted step's interpolation data.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    pub y0: Vec<f64>,
    /// All 10 stage derivative vectors of the step.
    pub k: Vec<Vec<f64>>,
}

impl DenseSegment {
    /// Evaluate the 5th-order interpolant at the normalized position s in [0, 1].
    pub fn eval(&self, s: f64, out: &mut [f64]) {
        let mut w = [0.0; DENSE_STAGES];
        for (i, poly) in B_DENSE.iter().enumerate() {
            let mut acc = poly[5];
            for j in (0..5).rev() {
                acc = acc * s + poly[j];
            }
            w[i] = acc * s;
        }
        for (m, o) in out.iter_mut().enumerate() {
            let mut v = self.y0[m];
            for (i, wi) in w.iter().enumerate() {
                v += self.h * wi * self.k[i][m];
            }
            *o = v;
        }
    }
}

/// An integrated solution: samples at every accepted step, the interpolant
/// per step when dense output is enabled, and any recorded events.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dense: Vec<DenseSegment>,
    pub events: Vec<(f64, String)>,
    pub outcome: Outcome,
    pub n_rhs_evals: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    pub fn last_t(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn last_y(&self) -> &[f64] {
        self.y.last().unwrap()
    }

    /// Dense evaluation at an arbitrary time inside the integrated span.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        if self.dense.is_empty() {
            return None;
        }
        let (lo, hi) = (self.dense[0].t0, {
            let seg = self.dense.last().unwrap();
            seg.t0 + seg.h
        });
        let forward = hi >= lo;
        let inside = if forward { t >= lo.min(hi) && t <= lo.max(hi) } else { false };
        if !inside && !(t >= hi.min(lo) && t <= hi.max(lo)) {
            return None;
        }
        // binary search for the segment containing t
        let idx = {
            let mut a = 0usize;
            let mut b = self.dense.len() - 1;
            while a < b {
                let mid = (a + b).div_ceil(2);
                let starts_after = if forward {
                    self.dense[mid].t0 <= t
                } else {
                    self.dense[mid].t0 >= t
                };
                if starts_after {
                    a = mid;
                } else {
                    b = mid - 1;
                }
            }
            a
        };
        let seg = &self.dense[idx];
        let s = (t - seg.t0) / seg.h;
        let mut out = vec![0.0; seg.y0.len()];
        seg.eval(s.clamp(0.0, 1.0), &mut out);
        Some(out)
    }
}

struct StepWork<S: Real> {
    k: Vec<Vec<S>>,
    y_stage: Vec<S>,
    y_high: Vec<S>,
    y_err: Vec<S>,
}

impl<S: Real> StepWork<S> {
    fn new(dim: usize) -> Self {
        StepWork {
            k: (0..DENSE_STAGES).map(|_| vec![S::zero(); dim]).collect(),
            y_stage: vec![S::zero(); dim],
            y_high: vec![S::zero(); dim],
            y_err: vec![S::zero(); dim],
        }
    }
}

fn wrms_norm<S: Real>(err: &[S], y0: &[S], y1: &[S], rtol: f64, atol: f64) -> S {
    let mut acc = S::zero();
    for i in 0..err.len() {
        let scale = S::from_f64(atol) + S::from_f64(rtol) * y0[i].abs().max(y1[i].abs());
        let r = err[i] / scale;
        acc += r * r;
    }
    (acc / S::from_f64(err.len() as f64)).sqrt()
}

/// Dense evaluation of the current (not yet stored) step, in working precision.
#[allow(clippy::needless_range_loop)]
fn dense_eval_s<S: Real>(y0: &[S], k: &[Vec<S>], h: S, s: S, out: &mut [S]) {
    let mut w = [S::zero(); DENSE_STAGES];
    for (i, poly) in B_DENSE.iter().enumerate() {
        let mut acc = S::from_f64(poly[5]);
        for j in (0..5).rev() {
            acc = acc * s + S::from_f64(poly[j]);
        }
        w[i] = acc * s;
    }
    for m in 0..out.len() {
        let mut v = y0[m];
        for (i, wi) in w.iter().enumerate() {
            v += h * *wi * k[i][m];
        }
        out[m] = v;
    }
}

/// Initial step heuristic following the usual two-evaluation estimate.
#[allow(clippy::needless_range_loop)]
fn initial_step<S: Real>(
    rhs: &mut RhsFn<'_, S>,
    t0: S,
    y0: &[S],
    f0: &[S],
    direction: f64,
    rtol: f64,
    atol: f64,
) -> S {
    let dim = y0.len();
    let mut d0 = S::zero();
    let mut d1 = S::zero();
    for i in 0..dim {
        let sc = S::from_f64(atol) + S::from_f64(rtol) * y0[i].abs();
        let a = y0[i] / sc;
        let b = f0[i] / sc;
        d0 += a * a;
        d1 += b * b;
    }
    let d0 = (d0 / S::from_f64(dim as f64)).sqrt();
    let d1 = (d1 / S::from_f64(dim as f64)).sqrt();
    let h0 = if d0.to_f64() < 1e-5 || d1.to_f64() < 1e-5 {
        S::from_f64(1e-6)
    } else {
        S::from_f64(0.01) * d0 / d1
    };
    // one explicit Euler probe to estimate the second derivative
    let mut y1 = vec![S::zero(); dim];
    let mut f1 = vec![S::zero(); dim];
    let hd = h0 * S::from_f64(direction);
    for i in 0..dim {
        y1[i] = y0[i] + hd * f0[i];
    }
    rhs(t0 + hd, &y1, &mut f1);
    let mut d2 = S::zero();
    for i in 0..dim {
        let sc = S::from_f64(atol) + S::from_f64(rtol) * y0[i].abs();
        let df = (f1[i] - f0[i]) / sc;
        d2 += df * df;
    }
    let d2 = (d2 / S::from_f64(dim as f64)).sqrt() / h0;
    let max_d = d1.max(d2);
    let h1 = if max_d.to_f64() <= 1e-15 {
        (h0 * S::from_f64(1e-3)).max(S::from_f64(1e-6))
    } else {
        let target = S::from_f64(0.01) / max_d;
        // h1 = target^(1/6) via f64 seed (accuracy is irrelevant here)
        S::from_f64(target.to_f64().powf(1.0 / 6.0))
    };
    h0.min(h1) * S::from_f64(direction)
}

/// Integrate y' = rhs(t, y) from t0 to t_end with adaptive steps, dense
/// output, and event detection. Returns the trajectory (f64 samples at each
/// accepted step) plus the terminal state in working precision.
#[allow(clippy::needless_range_loop)]
pub fn integrate<S: Real>(
    rhs: &mut RhsFn<'_, S>,
    t0: f64,
    y0: &[S],
    t_end: f64,
    cfg: &IntegratorConfig,
    events: &mut [EventFn<'_, S>],
) -> IntegrationResult<S> {
    cfg.validate()?;
    let dim = y0.len();
    let direction = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut work = StepWork::<S>::new(dim);
    let mut t = S::from_f64(t0);
    let mut y = y0.to_vec();
    let mut f_curr = vec![S::zero(); dim];
    rhs(t, &y, &mut f_curr);
    let mut n_evals = 1usize;

    let mut h = match cfg.initial_step {
        Some(h0) => S::from_f64(h0.abs() * direction),
        None => {
            n_evals += 1;
            initial_step(rhs, t, &y, &f_curr, direction, cfg.rel_tol, cfg.abs_tol)
        }
    };
    let span = (t_end - t0).abs();
    if h.abs().to_f64() > cfg.max_step {
        h = S::from_f64(cfg.max_step * direction);
    }
    if h.abs().to_f64() > span && span > 0.0 {
        h = S::from_f64(span * direction);
    }

    let mut traj = Trajectory {
        t: vec![t0],
        y: vec![y.iter().map(|v| v.to_f64()).collect()],
        dense: Vec::new(),
        events: Vec::new(),
        outcome: Outcome::ReachedEnd,
        n_rhs_evals: 0,
        accepted_steps: 0,
        rejected_steps: 0,
    };

    let mut g_curr: Vec<S> = events.iter().map(|e| (e.g)(t, &y)).collect();
    let mut err_prev: f64 = 1e-2;
    let q = 6.0;
    let (alpha, beta) = (0.7 / q, 0.4 / q);
    let safety = 0.9;

    'outer: loop {
        let remaining = S::from_f64(t_end) - t;
        if remaining.to_f64() * direction <= 0.0 {
            traj.outcome = Outcome::ReachedEnd;
            break;
        }
        if traj.accepted_steps + traj.rejected_steps >= cfg.max_steps {
            traj.outcome = Outcome::MaxSteps { t: t.to_f64() };
            break;
        }
        // land exactly on t_end
        if remaining.abs() < h.abs() {
            h = remaining;
        }
        let h_floor = S::machine_epsilon() * 16.0 * t.to_f64().abs().max(1e-30);
        if h.abs().to_f64() < h_floor {
            traj.outcome = Outcome::StepUnderflow { t: t.to_f64() };
            break;
        }

        // stages (k[0] is FSAL from the previous step)
        work.k[0].copy_from_slice(&f_curr);
        for i in 1..STAGES {
            for m in 0..dim {
                let mut acc = y[m];
                for (j, kj) in work.k.iter().enumerate().take(i) {
                    if A[i][j] != 0.0 {
                        acc += h * S::from_f64(A[i][j]) * kj[m];
                    }
                }
                work.y_stage[m] = acc;
            }
            let (head, tail) = work.k.split_at_mut(i);
            let _ = head;
            rhs(t + S::from_f64(C[i]) * h, &work.y_stage, &mut tail[0]);
            n_evals += 1;
        }
        for m in 0..dim {
            let mut acc = y[m];
            let mut ea = S::zero();
            for i in 0..STAGES {
                if B_HIGH[i] != 0.0 {
                    acc += h * S::from_f64(B_HIGH[i]) * work.k[i][m];
                }
                let diff = B_HIGH[i] - B_LOW[i];
                if diff != 0.0 {
                    ea += h * S::from_f64(diff) * work.k[i][m];
                }
            }
            work.y_high[m] = acc;
            work.y_err[m] = ea;
        }
        let err = wrms_norm(&work.y_err, &y, &work.y_high, cfg.rel_tol, cfg.abs_tol).to_f64();

        if !err.is_finite() {
            // singular stage evaluation: shrink hard
            h = h * S::from_f64(0.1);
            traj.rejected_steps += 1;
            continue;
        }

        if err <= 1.0 {
            // extra stage for the interpolant
            let need_dense = cfg.dense || !events.is_empty();
            if need_dense {
                for m in 0..dim {
                    let mut acc = y[m];
                    for (j, aj) in A_DENSE.iter().enumerate() {
                        if *aj != 0.0 {
                            acc += h * S::from_f64(*aj) * work.k[j][m];
                        }
                    }
                    work.y_stage[m] = acc;
                }
                let (head, tail) = work.k.split_at_mut(STAGES);
                let _ = head;
                rhs(t + S::from_f64(C_DENSE) * h, &work.y_stage, &mut tail[0]);
                n_evals += 1;
            }

            let t_new = t + h;
            // event scan over the step
            let mut stop_at: Option<(S, usize)> = None;
            for (ie, ev) in events.iter().enumerate() {
                let g_new = (ev.g)(t_new, &work.y_high);
                let old = g_curr[ie].to_f64();
                let new = g_new.to_f64();
                let crossed = match ev.direction {
                    Crossing::Rising => old < 0.0 && new >= 0.0,
                    Crossing::Falling => old > 0.0 && new <= 0.0,
                    Crossing::Any => (old < 0.0 && new >= 0.0) || (old > 0.0 && new <= 0.0),
                };
                if crossed {
                    // bisection on the interpolant
                    let mut lo = S::zero();
                    let mut hi = S::one();
                    let mut ys = vec![S::zero(); dim];
                    for _ in 0..80 {
                        let mid = (lo + hi) * S::from_f64(0.5);
                        dense_eval_s(&y, &work.k, h, mid, &mut ys);
                        let gm = (ev.g)(t + mid * h, &ys).to_f64();
                        let lo_is_old = match ev.direction {
                            Crossing::Rising => gm < 0.0,
                            Crossing::Falling => gm > 0.0,
                            Crossing::Any => (gm > 0.0) == (old > 0.0),
                        };
                        if lo_is_old {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let s_star = (lo + hi) * S::from_f64(0.5);
                    if ev.stop {
                        match stop_at {
                            Some((s_prev, _)) if s_prev <= s_star => {}
                            _ => stop_at = Some((s_star, ie)),
                        }
                    } else {
                        traj.events
                            .push(((t + s_star * h).to_f64(), ev.name.clone()));
                    }
                }
            }

            if let Some((s_star, ie)) = stop_at {
                let mut ys = vec![S::zero(); dim];
                dense_eval_s(&y, &work.k, h, s_star, &mut ys);
                let t_star = t + s_star * h;
                if cfg.dense {
                    traj.dense.push(DenseSegment {
                        t0: t.to_f64(),
                        h: h.to_f64(),
                        y0: y.iter().map(|v| v.to_f64()).collect(),
                        k: work
                            .k
                            .iter()
                            .map(|kv| kv.iter().map(|v| v.to_f64()).collect())
                            .collect(),
                    });
                }
                traj.t.push(t_star.to_f64());
                traj.y.push(ys.iter().map(|v| v.to_f64()).collect());
                traj.events.push((t_star.to_f64(), events[ie].name.clone()));
                traj.outcome = Outcome::Event {
                    name: events[ie].name.clone(),
                    t: t_star.to_f64(),
                };
                traj.accepted_steps += 1;
                traj.n_rhs_evals = n_evals;
                return Ok((traj, ys));
            }

            if cfg.dense {
                traj.dense.push(DenseSegment {
                    t0: t.to_f64(),
                    h: h.to_f64(),
                    y0: y.iter().map(|v| v.to_f64()).collect(),
                    k: work
                        .k
                        .iter()
                        .map(|kv| kv.iter().map(|v| v.to_f64()).collect())
                        .collect(),
                });
            }

            // FSAL: stage 8 is the derivative at (t_new, y_high)
            f_curr.copy_from_slice(&work.k[STAGES - 1]);
            for (ie, ev) in events.iter().enumerate() {
                g_curr[ie] = (ev.g)(t_new, &work.y_high);
            }
            t = t_new;
            y.copy_from_slice(&work.y_high);
            traj.t.push(t.to_f64());
            traj.y.push(y.iter().map(|v| v.to_f64()).collect());
            traj.accepted_steps += 1;

            // PI step-size controller
            let err_clamped = err.max(1e-10);
            let fac = safety * err_clamped.powf(-alpha) * err_prev.powf(beta);
            let fac = fac.clamp(0.2, 6.0);
            err_prev = err_clamped;
            let mut h_new = h.abs().to_f64() * fac;
            if h_new > cfg.max_step {
                h_new = cfg.max_step;
            }
            h = S::from_f64(h_new * direction);
        } else {
            traj.rejected_steps += 1;
            let fac = (safety * err.powf(-1.0 / q)).clamp(0.1, 0.9);
            h = h * S::from_f64(fac);
            if traj.rejected_steps > cfg.max_steps {
                traj.outcome = Outcome::MaxSteps { t: t.to_f64() };
                break 'outer;
            }
        }
    }

    traj.n_rhs_evals = n_evals;
    Ok((traj, y))
}

// ---------------------------------------------------------------------------
// Collision-directed drivers.
// ---------------------------------------------------------------------------

/// Result of a collision-directed integration, keeping the terminal state in
/// working precision for downstream evaluations that need it.
pub struct CollisionRun<S: Real> {
    pub traj: Trajectory,
    pub terminal: Vec<S>,
    pub initial_cluster_size: f64,
}

/// Integrate the Cartesian n-body equations until the minimum pairwise
/// distance inside the focus cluster drops below `stop_fraction` of the
/// initial cluster size, or until `t_max`.
pub fn integrate_to_collision<S: Real>(
    state0: &State,
    masses: &MassSystem,
    part: &ClusterPartition,
    cfg: &IntegratorConfig,
    stop_fraction: f64,
    t_max: f64,
) -> Result<CollisionRun<S>> {
    let y0: Vec<S> = state0.to_flat().iter().map(|&v| S::from_f64(v)).collect();
    let focus: Vec<usize> = part.focus().to_vec();
    let ms = masses.masses().to_vec();
    let r0 = cluster_i0(&ms, &focus, &y0).sqrt().to_f64();
    let threshold = stop_fraction * r0;

    let focus_ev = focus.clone();
    let mut events = vec![EventFn::<S> {
        name: "cluster_collision".into(),
        g: Box::new(move |_t, y| {
            cluster_min_distance(&focus_ev, y) - S::from_f64(threshold)
        }),
        direction: Crossing::Falling,
        stop: true,
    }];
    let ms_rhs = ms.clone();
    let mut rhs = move |_t: S, y: &[S], dy: &mut [S]| newton_rhs(&ms_rhs, y, dy);
    let (traj, terminal) = integrate(&mut rhs, state0.t, &y0, t_max, cfg, &mut events)?;
    match traj.outcome {
        Outcome::Event { .. } | Outcome::StepUnderflow { .. } => Ok(CollisionRun {
            traj,
            terminal,
            initial_cluster_size: r0,
        }),
        _ => Err(Error::NoCollision(t_max)),
    }
}

pub struct ShootOptions {
    /// Terminal cluster size target as a fraction of the initial size.
    pub target_fraction: f64,
    pub t_max: f64,
    pub max_bisections: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            target_fraction: 1e-10,
            t_max: 50.0,
            max_bisections: 120,
        }
    }
}

pub struct ShootResult<S: Real> {
    pub param: f64,
    pub run: CollisionRun<S>,
    pub terminal_r_g: f64,
    pub bisections: usize,
}

enum MissOutcome<S: Real> {
    Collision(CollisionRun<S>),
    /// Signed pair angular momentum about the pair center of mass at the
    /// closest approach; vanishes exactly at collision.
    Miss(f64),
}

fn shoot_probe<S: Real>(
    state0: &State,
    masses: &MassSystem,
    part: &ClusterPartition,
    cfg: &IntegratorConfig,
    opts: &ShootOptions,
) -> Result<MissOutcome<S>> {
    let focus: Vec<usize> = part.focus().to_vec();
    assert_eq!(focus.len(), 2, "shooting needs a two-body focus cluster");
    let (i, j) = (focus[0], focus[1]);
    let ms = masses.masses().to_vec();
    let y0: Vec<S> = state0.to_flat().iter().map(|&v| S::from_f64(v)).collect();
    let r0 = cluster_i0(&ms, &focus, &y0).sqrt().to_f64();
    let threshold = opts.target_fraction * r0;
    let n = ms.len();

    let focus_ev = focus.clone();
    let mut events = vec![
        EventFn::<S> {
            name: "cluster_collision".into(),
            g: Box::new(move |_t, y| {
                cluster_min_distance(&focus_ev, y) - S::from_f64(threshold * 0.97)
            }),
            direction: Crossing::Falling,
            stop: true,
        },
        EventFn::<S> {
            name: "pericenter".into(),
            g: Box::new(move |_t, y: &[S]| {
                // radial velocity of the pair: crosses zero upward at closest approach
                let dx = y[2 * j] - y[2 * i];
                let dy = y[2 * j + 1] - y[2 * i + 1];
                let dvx = y[2 * n + 2 * j] - y[2 * n + 2 * i];
                let dvy = y[2 * n + 2 * j + 1] - y[2 * n + 2 * i + 1];
                dx * dvx + dy * dvy
            }),
            direction: Crossing::Rising,
            stop: true,
        },
    ];
    let ms_rhs = ms.clone();
    let mut rhs = move |_t: S, y: &[S], dy: &mut [S]| newton_rhs(&ms_rhs, y, dy);
    // probes never need stored dense output
    let cfg_probe = IntegratorConfig {
        dense: false,
        ..cfg.clone()
    };
    let (traj, terminal) = integrate(&mut rhs, state0.t, &y0, opts.t_max, &cfg_probe, &mut events)?;
    match &traj.outcome {
        Outcome::Event { name, .. } if name == "cluster_collision" => Ok(MissOutcome::Collision(
            CollisionRun {
                traj,
                terminal,
                initial_cluster_size: r0,
            },
        )),
        Outcome::Event { name, .. } if name == "pericenter" => {
            let mu0 = cluster_mu0(&ms, &focus, &terminal).to_f64();
            Ok(MissOutcome::Miss(mu0))
        }
        Outcome::StepUnderflow { .. } => {
            // a step underflow near a deep pericenter: a genuine collision
            // only if the target depth was reached, otherwise keep bisecting
            // on the pair angular momentum at the deepest point
            let r_g = cluster_i0(&ms, &focus, &terminal).sqrt().to_f64();
            if r_g <= opts.target_fraction * r0 {
                Ok(MissOutcome::Collision(CollisionRun {
                    traj,
                    terminal,
                    initial_cluster_size: r0,
                }))
            } else {
                let mu0 = cluster_mu0(&ms, &focus, &terminal).to_f64();
                Ok(MissOutcome::Miss(mu0))
            }
        }
        _ => Err(Error::NoCollision(opts.t_max)),
    }
}

/// Bisect a one-parameter family of initial states on the signed
/// closest-approach angular momentum until the focus pair reaches a terminal
/// size below the target.
pub fn shoot_to_collision<S: Real>(
    family: &dyn Fn(f64) -> State,
    bracket: (f64, f64),
    masses: &MassSystem,
    part: &ClusterPartition,
    cfg: &IntegratorConfig,
    opts: &ShootOptions,
) -> Result<ShootResult<S>> {
    let (mut lo, mut hi) = bracket;
    let probe = |p: f64| -> Result<MissOutcome<S>> {
        shoot_probe(&family(p), masses, part, cfg, opts)
    };
    let mut m_lo = match probe(lo)? {
        MissOutcome::Collision(run) => {
            let r = terminal_r_g(&run, masses, part);
            return Ok(ShootResult {
                param: lo,
                run,
                terminal_r_g: r,
                bisections: 0,
            });
        }
        MissOutcome::Miss(m) => m,
    };
    let m_hi = match probe(hi)? {
        MissOutcome::Collision(run) => {
            let r = terminal_r_g(&run, masses, part);
            return Ok(ShootResult {
                param: hi,
                run,
                terminal_r_g: r,
                bisections: 0,
            });
        }
        MissOutcome::Miss(m) => m,
    };
    if m_lo.signum() == m_hi.signum() {
        return Err(Error::NoBracket);
    }
    for iter in 0..opts.max_bisections {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            return Err(Error::NoConvergence(format!(
                "shooting parameter resolution exhausted at {mid} after {iter} bisections"
            )));
        }
        match probe(mid)? {
            MissOutcome::Collision(run) => {
                let r = terminal_r_g(&run, masses, part);
                return Ok(ShootResult {
                    param: mid,
                    run,
                    terminal_r_g: r,
                    bisections: iter + 1,
                });
            }
            MissOutcome::Miss(m) => {
                if m.signum() == m_lo.signum() {
                    lo = mid;
                    m_lo = m;
                } else {
                    hi = mid;
                }
            }
        }
    }
    Err(Error::NoConvergence(
        "bisection exhausted without reaching the collision target".into(),
    ))
}

pub fn terminal_r_g<S: Real>(
    run: &CollisionRun<S>,
    masses: &MassSystem,
    part: &ClusterPartition,
) -> f64 {
    cluster_i0(masses.masses(), part.focus(), &run.terminal)
        .sqrt()
        .to_f64()
}
