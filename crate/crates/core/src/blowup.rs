//! McGehee-regularized dynamics of a collapsing cluster.
//!
//! Blowing up the chart variables with v = sqrt(r) rho, w = r^{3/2} omega and
//! the time rescaling dtau = r^{-3/2} dt turns the collision r = 0 into an
//! invariant manifold. Two vector fields live here:
//!
//! - the autonomous field on (r, v, s, w), which governs an isolated cluster
//!   and extends smoothly to the collision manifold, and
//! - the full field, which adds the influence of external bodies, the angle
//!   theta, the angular momentum mu, and co-integrates physical time, the
//!   cluster center of mass and the external bodies themselves.
//!
//! The difference of the two fields is exactly the non-autonomous
//! perturbation block, which decays exponentially in tau along a collision
//! orbit.

use crate::error::{Error, Result};
use crate::jacobi::{jacobi_forward, jacobi_positions, jacobi_velocity};
use crate::nbody::{ClusterPartition, MassSystem, State, SINGULAR_DISTANCE};
use crate::odeint::{integrate, IntegratorConfig};
use crate::shape::{ShapeContext, ShapeState};
use crate::vec2::Vec2;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// One blow-up sample along a trajectory (observable extraction, not state).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlowupSample {
    pub tau: f64,
    pub t_phys: f64,
    pub r: f64,
    pub v: f64,
    pub s: Vec<Vec2>,
    pub w: Vec<Vec2>,
    /// Continuously unwrapped rotation angle.
    pub theta: f64,
    pub mu: f64,
    /// d theta / d tau.
    pub theta_prime: f64,
}

/// The exact non-autonomous blocks of the full field at one state.
#[derive(Debug, Clone)]
pub struct PerturbationEval {
    /// mu^2/r + r^2 dU_ext/dr (enters v').
    pub delta_v: f64,
    /// r A^{-1} dU_ext/ds - r mudot A^{-1} B / ||(s,1)||^2 plus the
    /// gyroscopic coupling (mu/sqrt(r)) A^{-1}(J^T - J) w, with J the
    /// Jacobian of B/||(s,1)||^2. All three pieces enter w' and decay along
    /// a collision orbit.
    pub delta_w: DVector<f64>,
    /// mu / sqrt(r) (enters theta').
    pub delta_theta: f64,
    /// dmu/dt = sum_i grad_i U_ext . J (q_i - c_G).
    pub mudot: f64,
}

impl PerturbationEval {
    pub fn sup_norm(&self) -> f64 {
        let w = if self.delta_w.is_empty() {
            0.0
        } else {
            self.delta_w.amax()
        };
        self.delta_v.abs().max(w).max(self.delta_theta.abs())
    }
}

// ---------------------------------------------------------------------------
// Autonomous field on (r, v, s, w).
// ---------------------------------------------------------------------------

/// Isolated-cluster blow-up field. State layout: [r, v, s.., w..].
#[derive(Debug, Clone)]
pub struct AutonomousField {
    pub ctx: ShapeContext,
}

impl AutonomousField {
    pub fn new(cluster_masses: &[f64]) -> Self {
        AutonomousField {
            ctx: ShapeContext::new(cluster_masses),
        }
    }

    pub fn dim(&self) -> usize {
        2 + 2 * self.ctx.sdim()
    }

    pub fn pack(&self, r: f64, v: f64, s: &[Vec2], w: &[Vec2]) -> Vec<f64> {
        let mut y = vec![r, v];
        for sj in s {
            y.push(sj.x);
            y.push(sj.y);
        }
        for wj in w {
            y.push(wj.x);
            y.push(wj.y);
        }
        y
    }

    pub fn unpack(&self, y: &[f64]) -> (f64, f64, Vec<Vec2>, Vec<Vec2>) {
        let d = self.ctx.sdim();
        let ns = d / 2;
        let s = (0..ns)
            .map(|j| Vec2::new(y[2 + 2 * j], y[2 + 2 * j + 1]))
            .collect();
        let w = (0..ns)
            .map(|j| Vec2::new(y[2 + d + 2 * j], y[2 + d + 2 * j + 1]))
            .collect();
        (y[0], y[1], s, w)
    }

    pub fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let (r, v, s, w) = self.unpack(y);
        let d = self.ctx.sdim();
        let f = self.ctx.f_direct(&s, &w);
        let v_pot = self.ctx.v(&s)?;
        dy[0] = v * r;
        dy[1] = v * v / 2.0 + f - v_pot;
        if d == 0 {
            return Ok(());
        }
        let a = self.ctx.a_matrix(&s);
        let lu = a.lu();
        let grad_v = self.ctx.grad_v(&s)?;
        let grad_f = self.ctx.grad_f(&s, &w);
        let wv = self.ctx.shape_to_vector(&w);
        let da_w = self.ctx.a_matrix_directional(&s, &wv);
        let rhs = &grad_v + grad_f.scale(0.5) - &da_w * &wv;
        let wprime = lu
            .solve(&rhs)
            .ok_or_else(|| Error::NoConvergence("shape metric solve failed".into()))?
            - wv.scale(v / 2.0);
        for p in 0..d {
            dy[2 + p] = wv[p];
            dy[2 + d + p] = wprime[p];
        }
        Ok(())
    }

    /// Restpoint on the collision manifold above a critical shape:
    /// (r, v, s, w) = (0, sign * sqrt(2 V(s*)), s*, 0).
    pub fn equilibrium(&self, s_star: &[Vec2], ejection: bool) -> Result<Vec<f64>> {
        let v_pot = self.ctx.v(s_star)?;
        let v = (2.0 * v_pot).sqrt() * if ejection { 1.0 } else { -1.0 };
        Ok(self.pack(0.0, v, s_star, &vec![Vec2::ZERO; self.ctx.sdim() / 2]))
    }
}

/// Time reversal of the autonomous flow: (r, v, s, w)(tau) is a solution iff
/// (r, -v, s, -w)(-tau) is.
pub fn reverse_autonomous_state(field: &AutonomousField, y: &[f64]) -> Vec<f64> {
    let (r, v, s, w) = field.unpack(y);
    let w_neg: Vec<Vec2> = w.iter().map(|wj| -*wj).collect();
    field.pack(r, -v, &s, &w_neg)
}

/// Integrate an ejection orbit starting just off the collision manifold at a
/// restpoint shape, then reverse it into a collision orbit reaching r = 0.
/// Returns samples (tau, state) with tau increasing toward the collision.
pub fn reversed_ejection_reference(
    field: &AutonomousField,
    s_star: &[Vec2],
    r_seed: f64,
    r_stop: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let y0 = {
        let v_pot = field.ctx.v(s_star)?;
        let v = (2.0 * v_pot).sqrt();
        field.pack(r_seed, v, s_star, &vec![Vec2::ZERO; field.ctx.sdim() / 2])
    };
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        field.eval(y, dy).expect("autonomous field eval");
    };
    let mut events = vec![crate::odeint::EventFn::<f64> {
        name: "r_stop".into(),
        g: Box::new(move |_t, y: &[f64]| y[0] - r_stop),
        direction: crate::odeint::Crossing::Rising,
        stop: true,
    }];
    let (traj, _) = integrate(&mut rhs, 0.0, &y0, 1e6, cfg, &mut events)?;
    if !matches!(traj.outcome, crate::odeint::Outcome::Event { .. }) {
        return Err(Error::NoConvergence(
            "ejection orbit did not reach the requested size".into(),
        ));
    }
    let tau_end = traj.last_t();
    let samples = traj
        .t
        .iter()
        .zip(&traj.y)
        .rev()
        .map(|(&tau, y)| (tau_end - tau, reverse_autonomous_state(field, y)))
        .collect();
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Full field with external bodies.
// ---------------------------------------------------------------------------

/// Full blow-up system of a cluster inside an n-body configuration.
///
/// State layout:
/// [r, v, s(2ns), w(2ns), theta, mu, t_phys, c_g(2), cdot_g(2),
///  q_ext(2m), qdot_ext(2m)]
#[derive(Debug, Clone)]
pub struct FullField {
    pub ctx: ShapeContext,
    pub masses: MassSystem,
    pub members: Vec<usize>,
    pub external: Vec<usize>,
}

/// Unpacked full-field state.
#[derive(Debug, Clone)]
pub struct FullFieldState {
    pub r: f64,
    pub v: f64,
    pub s: Vec<Vec2>,
    pub w: Vec<Vec2>,
    pub theta: f64,
    pub mu: f64,
    pub t_phys: f64,
    pub c_g: Vec2,
    pub cdot_g: Vec2,
    pub q_ext: Vec<Vec2>,
    pub qdot_ext: Vec<Vec2>,
}

impl FullField {
    pub fn new(masses: &MassSystem, part: &ClusterPartition) -> Self {
        let members = part.focus().to_vec();
        let cluster_masses: Vec<f64> = members.iter().map(|&i| masses.mass(i)).collect();
        FullField {
            ctx: ShapeContext::new(&cluster_masses),
            masses: masses.clone(),
            members,
            external: part.external_members(),
        }
    }

    pub fn sdim(&self) -> usize {
        self.ctx.sdim()
    }

    pub fn dim(&self) -> usize {
        2 + 2 * self.sdim() + 3 + 4 + 4 * self.external.len()
    }

    fn offsets(&self) -> (usize, usize, usize, usize, usize, usize) {
        let d = self.sdim();
        let o_theta = 2 + 2 * d;
        let o_mu = o_theta + 1;
        let o_t = o_mu + 1;
        let o_cg = o_t + 1;
        let o_cgdot = o_cg + 2;
        let o_ext = o_cgdot + 2;
        (o_theta, o_mu, o_t, o_cg, o_cgdot, o_ext)
    }

    pub fn unpack(&self, y: &[f64]) -> FullFieldState {
        let d = self.sdim();
        let ns = d / 2;
        let (o_theta, o_mu, o_t, o_cg, o_cgdot, o_ext) = self.offsets();
        let m = self.external.len();
        FullFieldState {
            r: y[0],
            v: y[1],
            s: (0..ns)
                .map(|j| Vec2::new(y[2 + 2 * j], y[2 + 2 * j + 1]))
                .collect(),
            w: (0..ns)
                .map(|j| Vec2::new(y[2 + d + 2 * j], y[2 + d + 2 * j + 1]))
                .collect(),
            theta: y[o_theta],
            mu: y[o_mu],
            t_phys: y[o_t],
            c_g: Vec2::new(y[o_cg], y[o_cg + 1]),
            cdot_g: Vec2::new(y[o_cgdot], y[o_cgdot + 1]),
            q_ext: (0..m)
                .map(|j| Vec2::new(y[o_ext + 2 * j], y[o_ext + 2 * j + 1]))
                .collect(),
            qdot_ext: (0..m)
                .map(|j| Vec2::new(y[o_ext + 2 * m + 2 * j], y[o_ext + 2 * m + 2 * j + 1]))
                .collect(),
        }
    }

    pub fn pack(&self, st: &FullFieldState) -> Vec<f64> {
        let mut y = vec![st.r, st.v];
        for sj in &st.s {
            y.push(sj.x);
            y.push(sj.y);
        }
        for wj in &st.w {
            y.push(wj.x);
            y.push(wj.y);
        }
        y.push(st.theta);
        y.push(st.mu);
        y.push(st.t_phys);
        y.push(st.c_g.x);
        y.push(st.c_g.y);
        y.push(st.cdot_g.x);
        y.push(st.cdot_g.y);
        for q in &st.q_ext {
            y.push(q.x);
            y.push(q.y);
        }
        for v in &st.qdot_ext {
            y.push(v.x);
            y.push(v.y);
        }
        y
    }

    /// Chart state from a Cartesian state (errors if the chart is violated).
    pub fn from_cartesian(&self, state: &State) -> Result<FullFieldState> {
        let cluster_masses = &self.ctx.masses;
        let q: Vec<Vec2> = self.members.iter().map(|&i| state.q[i]).collect();
        let qdot: Vec<Vec2> = self.members.iter().map(|&i| state.qdot[i]).collect();
        let frame = jacobi_forward(&q, cluster_masses);
        let (zdot, cdot_g) = jacobi_velocity(&qdot, cluster_masses);
        let shape: ShapeState = self.ctx.shape_velocity(&frame, &zdot)?;
        let r = shape.r;
        Ok(FullFieldState {
            r,
            v: r.sqrt() * shape.rho,
            w: shape.omega.iter().map(|&o| o * r.powf(1.5)).collect(),
            s: shape.s,
            theta: shape.theta,
            mu: shape.mu,
            t_phys: state.t,
            c_g: frame.z_k,
            cdot_g,
            q_ext: self.external.iter().map(|&i| state.q[i]).collect(),
            qdot_ext: self.external.iter().map(|&i| state.qdot[i]).collect(),
        })
    }

    /// Cartesian positions and velocities of all bodies from a chart state.
    pub fn to_cartesian(&self, st: &FullFieldState) -> State {
        let n = self.masses.body_count();
        let mut q = vec![Vec2::ZERO; n];
        let mut qdot = vec![Vec2::ZERO; n];
        let z = self.ctx.z_from_chart(st.r, st.theta, &st.s);
        let q_cluster = jacobi_positions(&self.ctx.masses, &z, st.c_g);
        // velocities: zdot = dz/dr rho + sum_p dz/ds_p omega_p + thetadot J z
        let rho = st.v / st.r.sqrt();
        let omega: Vec<Vec2> = st.w.iter().map(|&wj| wj / st.r.powf(1.5)).collect();
        let n2 = self.ctx.norm_sq_s1(&st.s);
        let (_, om_form) = self.ctx.g_omega(&st.s, &omega);
        let thetadot = st.mu / (st.r * st.r) - om_form / n2;
        let (dz_dr, dz_ds) = self.ctx.chart_jacobian_z(st.r, st.theta, &st.s);
        let mut zdot: Vec<Vec2> = dz_dr.iter().map(|&d| d * rho).collect();
        for (p, col) in dz_ds.iter().enumerate() {
            let op = if p % 2 == 0 {
                omega[p / 2].x
            } else {
                omega[p / 2].y
            };
            for (zd, dj) in zdot.iter_mut().zip(col) {
                *zd += *dj * op;
            }
        }
        for (zd, zj) in zdot.iter_mut().zip(&z) {
            *zd += zj.perp() * thetadot;
        }
        let qdot_cluster = jacobi_positions(&self.ctx.masses, &zdot, st.cdot_g);
        for (a, &i) in self.members.iter().enumerate() {
            q[i] = q_cluster[a];
            qdot[i] = qdot_cluster[a];
        }
        for (a, &i) in self.external.iter().enumerate() {
            q[i] = st.q_ext[a];
            qdot[i] = st.qdot_ext[a];
        }
        State::new(st.t_phys, q, qdot)
    }

    /// External-potential derivatives in chart variables:
    /// (dU_ext/dr, dU_ext/ds, mudot, grad_i U_ext on cluster bodies).
    fn u_ext_chart_derivatives(
        &self,
        st: &FullFieldState,
        q_cluster: &[Vec2],
    ) -> Result<(f64, DVector<f64>, f64, Vec<Vec2>)> {
        let k = self.members.len();
        let mut grad = vec![Vec2::ZERO; k];
        for (a, &i) in self.members.iter().enumerate() {
            for (b, &j) in self.external.iter().enumerate() {
                let diff = st.q_ext[b] - q_cluster[a];
                let dist = diff.norm();
                if dist < SINGULAR_DISTANCE {
                    return Err(Error::SingularConfiguration(i, j));
                }
                grad[a] +=
                    diff * (self.masses.mass(i) * self.masses.mass(j) / (dist * dist * dist));
            }
        }
        // the chart scales the relative part only: dq_i/dr = (q_i - c_G)/r
        let du_dr = q_cluster
            .iter()
            .zip(&grad)
            .map(|(qi, g)| g.dot(*qi - st.c_g) / st.r)
            .sum();
        // dU_ext/ds_p through the linear Jacobi map
        let d = self.sdim();
        let mut du_ds = DVector::zeros(d);
        if d > 0 {
            let (_, dz_ds) = self.ctx.chart_jacobian_z(st.r, st.theta, &st.s);
            for p in 0..d {
                let dq = jacobi_positions(&self.ctx.masses, &dz_ds[p], Vec2::ZERO);
                du_ds[p] = dq.iter().zip(&grad).map(|(dq_i, g)| g.dot(*dq_i)).sum();
            }
        }
        // rotation of the relative part about the cluster center of mass
        let mudot = q_cluster
            .iter()
            .zip(&grad)
            .map(|(qi, g)| g.dot((*qi - st.c_g).perp()))
            .sum();
        Ok((du_dr, du_ds, mudot, grad))
    }

    /// Exact non-autonomous blocks at a chart state.
    pub fn perturbation_eval(&self, st: &FullFieldState) -> Result<PerturbationEval> {
        if st.r <= 0.0 {
            return Err(Error::InvalidSegment("perturbation needs r > 0".into()));
        }
        let d = self.sdim();
        let (du_dr, du_ds, mudot) = if self.external.is_empty() {
            (0.0, DVector::zeros(d), 0.0)
        } else {
            let z = self.ctx.z_from_chart(st.r, st.theta, &st.s);
            let q_cluster = jacobi_positions(&self.ctx.masses, &z, st.c_g);
            let (du_dr, du_ds, mudot, _) = self.u_ext_chart_derivatives(st, &q_cluster)?;
            (du_dr, du_ds, mudot)
        };
        let delta_w = if d == 0 {
            DVector::zeros(0)
        } else {
            let a = self.ctx.a_matrix(&st.s);
            let lu = a.lu();
            let b = self.ctx.b_vector(&st.s);
            let n2 = self.ctx.norm_sq_s1(&st.s);
            let jmat = self.ctx.c_jacobian(&st.s);
            let wv = self.ctx.shape_to_vector(&st.w);
            let gyro = (jmat.transpose() - jmat) * wv;
            let rhs = du_ds.scale(st.r) - b.scale(st.r * mudot / n2)
                + gyro.scale(st.mu / st.r.sqrt());
            lu.solve(&rhs)
                .ok_or_else(|| Error::NoConvergence("shape metric solve failed".into()))?
        };
        Ok(PerturbationEval {
            delta_v: st.mu * st.mu / st.r + st.r * st.r * du_dr,
            delta_w,
            delta_theta: st.mu / st.r.sqrt(),
            mudot,
        })
    }

    /// Full vector field in tau time.
    pub fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let st = self.unpack(y);
        if st.r <= 0.0 {
            return Err(Error::InvalidSegment("full field needs r > 0".into()));
        }
        let d = self.sdim();
        let (o_theta, o_mu, o_t, o_cg, o_cgdot, o_ext) = self.offsets();
        let r32 = st.r * st.r.sqrt();

        let f = self.ctx.f_direct(&st.s, &st.w);
        let v_pot = self.ctx.v(&st.s)?;
        let n2 = self.ctx.norm_sq_s1(&st.s);
        let (_, om_w) = self.ctx.g_omega(&st.s, &st.w);

        let z = self.ctx.z_from_chart(st.r, st.theta, &st.s);
        let q_cluster = jacobi_positions(&self.ctx.masses, &z, st.c_g);
        let (du_dr, du_ds, mudot, grad_ext) = if self.external.is_empty() {
            (
                0.0,
                DVector::zeros(d),
                0.0,
                vec![Vec2::ZERO; self.members.len()],
            )
        } else {
            self.u_ext_chart_derivatives(&st, &q_cluster)?
        };

        dy[0] = st.v * st.r;
        dy[1] = st.v * st.v / 2.0 + f - v_pot + st.mu * st.mu / st.r + st.r * st.r * du_dr;

        if d > 0 {
            let a = self.ctx.a_matrix(&st.s);
            let lu = a.lu();
            let grad_v = self.ctx.grad_v(&st.s)?;
            let grad_f = self.ctx.grad_f(&st.s, &st.w);
            let wv = self.ctx.shape_to_vector(&st.w);
            let da_w = self.ctx.a_matrix_directional(&st.s, &wv);
            let b = self.ctx.b_vector(&st.s);
            let jmat = self.ctx.c_jacobian(&st.s);
            let gyro = (jmat.transpose() - jmat) * &wv;
            let rhs = &grad_v + grad_f.scale(0.5) - &da_w * &wv + du_ds.scale(st.r)
                - b.scale(st.r * mudot / n2)
                + gyro.scale(st.mu / st.r.sqrt());
            let wprime = lu
                .solve(&rhs)
                .ok_or_else(|| Error::NoConvergence("shape metric solve failed".into()))?
                - wv.scale(st.v / 2.0);
            for p in 0..d {
                dy[2 + p] = wv[p];
                dy[2 + d + p] = wprime[p];
            }
        }

        dy[o_theta] = st.mu / st.r.sqrt() - om_w / n2;
        dy[o_mu] = r32 * mudot;
        dy[o_t] = r32;
        dy[o_cg] = r32 * st.cdot_g.x;
        dy[o_cg + 1] = r32 * st.cdot_g.y;
        let m_g: f64 = self.ctx.masses.iter().sum();
        let cg_acc = grad_ext.iter().fold(Vec2::ZERO, |acc, g| acc + *g) / m_g;
        dy[o_cgdot] = r32 * cg_acc.x;
        dy[o_cgdot + 1] = r32 * cg_acc.y;

        // external bodies feel everything
        let m = self.external.len();
        for (b, &j) in self.external.iter().enumerate() {
            dy[o_ext + 2 * b] = r32 * st.qdot_ext[b].x;
            dy[o_ext + 2 * b + 1] = r32 * st.qdot_ext[b].y;
            let mut acc = Vec2::ZERO;
            for (a, &i) in self.members.iter().enumerate() {
                let diff = q_cluster[a] - st.q_ext[b];
                let dist = diff.norm();
                if dist < SINGULAR_DISTANCE {
                    return Err(Error::SingularConfiguration(i, j));
                }
                acc += diff * (self.masses.mass(i) / (dist * dist * dist));
            }
            for (b2, &j2) in self.external.iter().enumerate() {
                if b2 == b {
                    continue;
                }
                let diff = st.q_ext[b2] - st.q_ext[b];
                let dist = diff.norm();
                if dist < SINGULAR_DISTANCE {
                    return Err(Error::SingularConfiguration(j, j2));
                }
                acc += diff * (self.masses.mass(j2) / (dist * dist * dist));
            }
            dy[o_ext + 2 * m + 2 * b] = r32 * acc.x;
            dy[o_ext + 2 * m + 2 * b + 1] = r32 * acc.y;
        }
        Ok(())
    }
}

/// Energy relation in blow-up variables:
/// v^2/2 + F/2 - V + mu^2/(2r) - r (H_G - M_G |cdot_G|^2 / 2) = 0.
pub fn blowup_energy_residual(ctx: &ShapeContext, st: &FullFieldState, h_g: f64) -> Result<f64> {
    let f = ctx.f_direct(&st.s, &st.w);
    let v_pot = ctx.v(&st.s)?;
    let m_g: f64 = ctx.masses.iter().sum();
    Ok(st.v * st.v / 2.0 + f / 2.0 - v_pot + st.mu * st.mu / (2.0 * st.r)
        - st.r * (h_g - m_g * st.cdot_g.norm_sq() / 2.0))
}

// ---------------------------------------------------------------------------
// Blow-up observables along a Cartesian trajectory.
// ---------------------------------------------------------------------------

/// How to accumulate tau = integral of r^{-3/2} dt between samples.
pub enum TauQuadrature {
    /// Per-interval power-law interpolation in (T_est - t); exact on pure
    /// power-law collapse and accurate on near-power-law tails.
    PowerLaw { t_est: f64 },
    /// Plain trapezoid (for short, non-collapsing spans).
    Trapezoid,
}

fn tau_increment(quad: &TauQuadrature, t0: f64, t1: f64, g0: f64, g1: f64) -> f64 {
    match quad {
        TauQuadrature::Trapezoid => 0.5 * (g0 + g1) * (t1 - t0),
        TauQuadrature::PowerLaw { t_est } => {
            let s0 = t_est - t0;
            let s1 = t_est - t1;
            if s0 <= 0.0 || s1 <= 0.0 || s0 <= s1 {
                return 0.5 * (g0 + g1) * (t1 - t0);
            }
            // g(sigma) ~ g0 (sigma/s0)^p through both endpoints
            let p = (g1 / g0).ln() / (s1 / s0).ln();
            if (p + 1.0).abs() < 1e-9 {
                g0 * s0 * (s0 / s1).ln()
            } else {
                g0 * s0 / (p + 1.0) * (1.0 - (s1 / s0).powf(p + 1.0))
            }
        }
    }
}

/// Blow-up observable series plus the chart bookkeeping it was built with.
#[derive(Debug, Clone)]
pub struct BlowupSeries {
    pub samples: Vec<BlowupSample>,
    /// Member order of the Jacobi chart actually used.
    pub member_order: Vec<usize>,
    /// Set when the terminal cluster size is not monotone (collision not yet
    /// dominant); a warning, not an error.
    pub monotone_warning: bool,
}

/// Extract blow-up observables from Cartesian samples of a collision orbit.
///
/// The chart needs the last Jacobi component of the focus cluster to stay
/// away from zero; if the natural member order violates that, the members
/// are permuted once (margin checked on a subsample) before extraction.
/// A non-monotone terminal r is reported via the returned flag, not an error.
pub fn mcgehee_observables(
    states: &[State],
    masses: &MassSystem,
    part: &ClusterPartition,
    quad: &TauQuadrature,
) -> Result<BlowupSeries> {
    let members = choose_chart_permutation(states, masses, part)?;
    let cluster_masses: Vec<f64> = members.iter().map(|&i| masses.mass(i)).collect();
    let ctx = ShapeContext::new(&cluster_masses);

    let mut samples = Vec::with_capacity(states.len());
    let mut tau = 0.0;
    let mut prev: Option<(f64, f64)> = None; // (t, r^{-3/2})
    let mut theta_prev = 0.0;
    let mut theta_acc = 0.0;
    let mut monotone_warning = false;
    let mut r_min = f64::INFINITY;

    for state in states {
        let q: Vec<Vec2> = members.iter().map(|&i| state.q[i]).collect();
        let qdot: Vec<Vec2> = members.iter().map(|&i| state.qdot[i]).collect();
        let frame = jacobi_forward(&q, &cluster_masses);
        let (zdot, _) = jacobi_velocity(&qdot, &cluster_masses);
        let shape = ctx.shape_velocity(&frame, &zdot)?;
        let r = shape.r;
        let g = r.powf(-1.5);
        if let Some((t0, g0)) = prev {
            tau += tau_increment(quad, t0, state.t, g0, g);
        }
        prev = Some((state.t, g));

        if r > r_min * 1.0000001 {
            monotone_warning = true;
        }
        r_min = r_min.min(r);

        // unwrap theta continuously
        if samples.is_empty() {
            theta_acc = shape.theta;
        } else {
            let mut dth = shape.theta - theta_prev;
            while dth > std::f64::consts::PI {
                dth -= 2.0 * std::f64::consts::PI;
            }
            while dth < -std::f64::consts::PI {
                dth += 2.0 * std::f64::consts::PI;
            }
            theta_acc += dth;
        }
        theta_prev = shape.theta;

        let w: Vec<Vec2> = shape.omega.iter().map(|&o| o * r.powf(1.5)).collect();
        let n2 = ctx.norm_sq_s1(&shape.s);
        let (_, om_w) = ctx.g_omega(&shape.s, &w);
        samples.push(BlowupSample {
            tau,
            t_phys: state.t,
            r,
            v: r.sqrt() * shape.rho,
            s: shape.s.clone(),
            w,
            theta: theta_acc,
            mu: shape.mu,
            theta_prime: shape.mu / r.sqrt() - om_w / n2,
        });
    }
    Ok(BlowupSeries {
        samples,
        member_order: members,
        monotone_warning,
    })
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn chart_margin(states: &[State], masses: &[f64], members: &[usize], stride: usize) -> f64 {
    let nu = crate::jacobi::reduced_masses(masses);
    let k = members.len();
    let mut worst = f64::INFINITY;
    for state in states.iter().step_by(stride.max(1)) {
        let q: Vec<Vec2> = members.iter().map(|&i| state.q[i]).collect();
        let frame = jacobi_forward(&q, masses);
        let r = frame.i0().sqrt();
        if r == 0.0 {
            return 0.0;
        }
        let margin = frame.frak_z[k - 2].norm() * nu[k - 2].sqrt() / r;
        worst = worst.min(margin);
    }
    worst
}

fn choose_chart_permutation(
    states: &[State],
    masses: &MassSystem,
    part: &ClusterPartition,
) -> Result<Vec<usize>> {
    let base = part.focus().to_vec();
    let stride = (states.len() / 64).max(1);
    let identity_masses: Vec<f64> = base.iter().map(|&i| masses.mass(i)).collect();
    if chart_margin(states, &identity_masses, &base, stride) > 10.0 * crate::shape::CHART_EPS {
        return Ok(base);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(&base) {
        let pm: Vec<f64> = perm.iter().map(|&i| masses.mass(i)).collect();
        let margin = chart_margin(states, &pm, &perm, stride);
        if best.as_ref().is_none_or(|(m, _)| margin > *m) {
            best = Some((margin, perm));
        }
    }
    let (margin, perm) = best.unwrap();
    if margin <= 10.0 * crate::shape::CHART_EPS {
        return Err(Error::ChartViolation(margin));
    }
    Ok(perm)
}
