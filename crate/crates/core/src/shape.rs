//! The size-rotation-shape chart on a cluster's Jacobi coordinates.
//!
//! Treating the relative coordinates as complex numbers, a cluster
//! configuration factors as
//!
//!   frak_z = r e^{i theta} (s, 1) / ||(s, 1)||
//!
//! with r the mass-metric size, theta the rotation angle carried by the last
//! Jacobi component, and s in C^{k-2} the shape. The chart is valid wherever
//! the last normalized component stays away from zero.
//!
//! On the velocity side the kinetic energy of the relative motion splits into
//! radial, rotational and shape parts; the shape part is the quadratic form
//! F(s, omega) = omega^T A(s) omega of the Fubini-Study metric, and the
//! rotation couples through the linear form Omega(s, omega) = B(s)^T omega.
//! The shape potential is V(s) = ||(s,1)|| U((s,1)).

use crate::error::{Error, Result};
use crate::jacobi::{
    jacobi_positions, potential_z, potential_z_gradient, reduced_masses,
    JacobiFrame,
};
use crate::vec2::Vec2;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Relative chart tolerance: |z_{k-1}|-fraction of the cluster size below
/// which the chart is rejected and the caller should permute the cluster.
pub const CHART_EPS: f64 = 1e-10;

fn cmul(a: Vec2, b: Vec2) -> Vec2 {
    Vec2::new(a.x * b.x - a.y * b.y, a.x * b.y + a.y * b.x)
}

fn cdiv(a: Vec2, b: Vec2) -> Vec2 {
    let d = b.norm_sq();
    Vec2::new((a.x * b.x + a.y * b.y) / d, (a.y * b.x - a.x * b.y) / d)
}

/// Chart point plus chart velocities of one cluster configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeState {
    pub r: f64,
    pub theta: f64,
    /// Shape coordinates, k-2 complex entries.
    pub s: Vec<Vec2>,
    pub rho: f64,
    /// Shape velocities omega = ds/dt.
    pub omega: Vec<Vec2>,
    pub thetadot: f64,
    /// Angular momentum conjugate to theta: mu = r^2 thetadot
    /// + r^2 Omega(s, omega)/||(s,1)||^2.
    pub mu: f64,
}

/// Evaluated Fubini-Study quantities at one (s, omega).
#[derive(Debug, Clone)]
pub struct FubiniEval {
    /// Shape kinetic metric, F = omega^T A omega.
    pub a: DMatrix<f64>,
    /// Rotation coupling, Omega = b^T omega.
    pub b: DVector<f64>,
    pub g_val: f64,
    pub omega_val: f64,
    pub f_val: f64,
    pub v_val: f64,
    pub grad_v: DVector<f64>,
    pub grad_f_s: DVector<f64>,
}

/// Mass data of one cluster, fixing the chart and all shape-side quantities.
#[derive(Debug, Clone)]
pub struct ShapeContext {
    pub masses: Vec<f64>,
    pub nu: Vec<f64>,
}

impl ShapeContext {
    pub fn new(masses: &[f64]) -> Self {
        ShapeContext {
            masses: masses.to_vec(),
            nu: reduced_masses(masses),
        }
    }

    pub fn k(&self) -> usize {
        self.masses.len()
    }

    /// Shape-space real dimension 2(k-2).
    pub fn sdim(&self) -> usize {
        2 * (self.k() - 2)
    }

    /// ||(s,1)||^2 in the mass metric.
    pub fn norm_sq_s1(&self, s: &[Vec2]) -> f64 {
        let k = self.k();
        let mut n2 = self.nu[k - 2];
        for (j, sj) in s.iter().enumerate() {
            n2 += self.nu[j] * sj.norm_sq();
        }
        n2
    }

    /// Hermitian pairings G = Re<<(s,1),(w,0)>> and Omega = Im<<(s,1),(w,0)>>.
    pub fn g_omega(&self, s: &[Vec2], w: &[Vec2]) -> (f64, f64) {
        let mut g = 0.0;
        let mut om = 0.0;
        for j in 0..s.len() {
            // conj(s_j) * w_j under the mass metric
            g += self.nu[j] * s[j].dot(w[j]);
            om += self.nu[j] * s[j].cross(w[j]);
        }
        (g, om)
    }

    /// Mass-metric squared norm of (w, 0).
    pub fn norm_sq_w(&self, w: &[Vec2]) -> f64 {
        w.iter()
            .enumerate()
            .map(|(j, wj)| self.nu[j] * wj.norm_sq())
            .sum()
    }

    /// F(s, w) evaluated from its explicit form.
    pub fn f_direct(&self, s: &[Vec2], w: &[Vec2]) -> f64 {
        if s.is_empty() {
            return 0.0;
        }
        let n2 = self.norm_sq_s1(s);
        let (g, om) = self.g_omega(s, w);
        self.norm_sq_w(w) / n2 - (g * g + om * om) / (n2 * n2)
    }

    fn unit_w(&self, p: usize) -> Vec<Vec2> {
        let mut w = vec![Vec2::ZERO; self.k() - 2];
        if p.is_multiple_of(2) {
            w[p / 2].x = 1.0;
        } else {
            w[p / 2].y = 1.0;
        }
        w
    }

    fn vec_to_w(&self, v: &DVector<f64>) -> Vec<Vec2> {
        (0..self.k() - 2)
            .map(|j| Vec2::new(v[2 * j], v[2 * j + 1]))
            .collect()
    }

    fn w_to_vec(&self, w: &[Vec2]) -> DVector<f64> {
        let mut v = DVector::zeros(self.sdim());
        for (j, wj) in w.iter().enumerate() {
            v[2 * j] = wj.x;
            v[2 * j + 1] = wj.y;
        }
        v
    }

    /// A(s) assembled by polarization of the quadratic form F(s, .).
    pub fn a_matrix(&self, s: &[Vec2]) -> DMatrix<f64> {
        let d = self.sdim();
        let mut a = DMatrix::zeros(d, d);
        let mut diag = vec![0.0; d];
        for p in 0..d {
            diag[p] = self.f_direct(s, &self.unit_w(p));
            a[(p, p)] = diag[p];
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let mut w = self.unit_w(p);
                let wq = self.unit_w(q);
                for (a_, b_) in w.iter_mut().zip(&wq) {
                    *a_ += *b_;
                }
                let cross = 0.5 * (self.f_direct(s, &w) - diag[p] - diag[q]);
                a[(p, q)] = cross;
                a[(q, p)] = cross;
            }
        }
        a
    }

    /// B(s) with Omega(s, w) = B^T w.
    pub fn b_vector(&self, s: &[Vec2]) -> DVector<f64> {
        let d = self.sdim();
        let mut b = DVector::zeros(d);
        for p in 0..d {
            let (_, om) = self.g_omega(s, &self.unit_w(p));
            b[p] = om;
        }
        b
    }

    /// Analytic gradient of F with respect to the real components of s.
    pub fn grad_f(&self, s: &[Vec2], w: &[Vec2]) -> DVector<f64> {
        let d = self.sdim();
        let mut grad = DVector::zeros(d);
        if d == 0 {
            return grad;
        }
        let n2 = self.norm_sq_s1(s);
        let n4 = n2 * n2;
        let n6 = n4 * n2;
        let (g, om) = self.g_omega(s, w);
        let w2 = self.norm_sq_w(w);
        let go2 = g * g + om * om;
        for j in 0..s.len() {
            let nu = self.nu[j];
            // d/dx_j
            grad[2 * j] = -2.0 * nu * s[j].x * w2 / n4
                - (2.0 * g * nu * w[j].x + 2.0 * om * nu * w[j].y) / n4
                + 4.0 * nu * s[j].x * go2 / n6;
            // d/dy_j
            grad[2 * j + 1] = -2.0 * nu * s[j].y * w2 / n4
                - (2.0 * g * nu * w[j].y - 2.0 * om * nu * w[j].x) / n4
                + 4.0 * nu * s[j].y * go2 / n6;
        }
        grad
    }

    /// Directional derivative of A(s) along the shape direction d,
    /// assembled by polarization of w -> d . grad_s F(s, w).
    pub fn a_matrix_directional(&self, s: &[Vec2], dir: &DVector<f64>) -> DMatrix<f64> {
        let d = self.sdim();
        let mut m = DMatrix::zeros(d, d);
        let q_form = |w: &[Vec2]| self.grad_f(s, w).dot(dir);
        let mut diag = vec![0.0; d];
        for p in 0..d {
            diag[p] = q_form(&self.unit_w(p));
            m[(p, p)] = diag[p];
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let mut w = self.unit_w(p);
                let wq = self.unit_w(q);
                for (a_, b_) in w.iter_mut().zip(&wq) {
                    *a_ += *b_;
                }
                let cross = 0.5 * (q_form(&w) - diag[p] - diag[q]);
                m[(p, q)] = cross;
                m[(q, p)] = cross;
            }
        }
        m
    }

    /// Jacobian of C(s) = B(s)/||(s,1)||^2, layout J[p][q] = dC_p/ds_q.
    /// Its antisymmetric part drives the gyroscopic coupling of a nonzero
    /// cluster angular momentum into the shape dynamics.
    #[allow(clippy::needless_range_loop)]
    pub fn c_jacobian(&self, s: &[Vec2]) -> DMatrix<f64> {
        let d = self.sdim();
        let mut jmat = DMatrix::zeros(d, d);
        if d == 0 {
            return jmat;
        }
        let n2 = self.norm_sq_s1(s);
        let n4 = n2 * n2;
        let b = self.b_vector(s);
        for l in 0..s.len() {
            let nu = self.nu[l];
            // dB_{x_l}/dy_l = -nu_l, dB_{y_l}/dx_l = +nu_l, all else zero
            jmat[(2 * l, 2 * l + 1)] += -nu / n2;
            jmat[(2 * l + 1, 2 * l)] += nu / n2;
        }
        for p in 0..d {
            for (m, sm) in s.iter().enumerate() {
                let nu = self.nu[m];
                jmat[(p, 2 * m)] += -2.0 * b[p] * nu * sm.x / n4;
                jmat[(p, 2 * m + 1)] += -2.0 * b[p] * nu * sm.y / n4;
            }
        }
        jmat
    }

    /// Embed s into the relative coordinates as (s, 1).
    pub fn s_to_z(&self, s: &[Vec2]) -> Vec<Vec2> {
        let mut z = s.to_vec();
        z.push(Vec2::new(1.0, 0.0));
        z
    }

    /// Shape potential V(s) = ||(s,1)|| U((s,1)).
    pub fn v(&self, s: &[Vec2]) -> Result<f64> {
        let z = self.s_to_z(s);
        let u = potential_z(&self.masses, &z)?;
        Ok(self.norm_sq_s1(s).sqrt() * u)
    }

    /// Analytic gradient of V with respect to the real components of s.
    pub fn grad_v(&self, s: &[Vec2]) -> Result<DVector<f64>> {
        let d = self.sdim();
        let z = self.s_to_z(s);
        let u = potential_z(&self.masses, &z)?;
        let grad_u_z = potential_z_gradient(&self.masses, &z)?;
        let n = self.norm_sq_s1(s).sqrt();
        let mut grad = DVector::zeros(d);
        for j in 0..s.len() {
            let nu = self.nu[j];
            grad[2 * j] = nu * s[j].x / n * u + n * grad_u_z[2 * j];
            grad[2 * j + 1] = nu * s[j].y / n * u + n * grad_u_z[2 * j + 1];
        }
        Ok(grad)
    }

    /// Hessian of V by central differences of the analytic gradient.
    pub fn hessian_v(&self, s: &[Vec2]) -> Result<DMatrix<f64>> {
        let d = self.sdim();
        let mut h = DMatrix::zeros(d, d);
        let step = 1e-6;
        for p in 0..d {
            let mut sp = s.to_vec();
            let mut sm = s.to_vec();
            if p % 2 == 0 {
                sp[p / 2].x += step;
                sm[p / 2].x -= step;
            } else {
                sp[p / 2].y += step;
                sm[p / 2].y -= step;
            }
            let gp = self.grad_v(&sp)?;
            let gm = self.grad_v(&sm)?;
            for q in 0..d {
                h[(q, p)] = (gp[q] - gm[q]) / (2.0 * step);
            }
        }
        // symmetrize
        let ht = h.transpose();
        Ok((h + ht) * 0.5)
    }

    /// Full Fubini-Study evaluation at (s, omega).
    pub fn fubini_eval(&self, s: &[Vec2], omega: &[Vec2]) -> Result<FubiniEval> {
        let a = self.a_matrix(s);
        let b = self.b_vector(s);
        let (g_val, omega_val) = self.g_omega(s, omega);
        let f_val = self.f_direct(s, omega);
        let v_val = self.v(s)?;
        let grad_v = self.grad_v(s)?;
        let grad_f_s = self.grad_f(s, omega);
        Ok(FubiniEval {
            a,
            b,
            g_val,
            omega_val,
            f_val,
            v_val,
            grad_v,
            grad_f_s,
        })
    }

    /// Chart coordinates of a Jacobi frame (positions only).
    pub fn shape_forward(&self, frame: &JacobiFrame) -> Result<(f64, f64, Vec<Vec2>)> {
        let k = self.k();
        let r = frame.i0().sqrt();
        let z_last = frame.frak_z[k - 2];
        // mass-normalized magnitude of the chart-carrying component
        if z_last.norm() * self.nu[k - 2].sqrt() < CHART_EPS * r {
            return Err(Error::ChartViolation(z_last.norm() * self.nu[k - 2].sqrt() / r));
        }
        let theta = z_last.y.atan2(z_last.x);
        let s = frame.frak_z[..k - 2]
            .iter()
            .map(|&z| cdiv(z, z_last))
            .collect();
        Ok((r, theta, s))
    }

    /// Chart coordinates and velocities from a frame and its velocity frame.
    pub fn shape_velocity(&self, frame: &JacobiFrame, zdot: &[Vec2]) -> Result<ShapeState> {
        let k = self.k();
        let (r, theta, s) = self.shape_forward(frame)?;
        let rho = frame
            .frak_z
            .iter()
            .zip(zdot)
            .enumerate()
            .map(|(j, (z, zd))| self.nu[j] * z.dot(*zd))
            .sum::<f64>()
            / r;
        let z_last = frame.frak_z[k - 2];
        let zd_last = zdot[k - 2];
        let omega: Vec<Vec2> = (0..k - 2)
            .map(|j| {
                let num = cmul(zdot[j], z_last) - cmul(frame.frak_z[j], zd_last);
                cdiv(num, cmul(z_last, z_last))
            })
            .collect();
        let thetadot = z_last.cross(zd_last) / z_last.norm_sq();
        let n2 = self.norm_sq_s1(&s);
        let (_, om) = self.g_omega(&s, &omega);
        let mu = r * r * thetadot + r * r * om / n2;
        Ok(ShapeState {
            r,
            theta,
            s,
            rho,
            omega,
            thetadot,
            mu,
        })
    }

    /// Reconstruct relative coordinates from chart values.
    pub fn z_from_chart(&self, r: f64, theta: f64, s: &[Vec2]) -> Vec<Vec2> {
        let n = self.norm_sq_s1(s).sqrt();
        let rot = Vec2::new(theta.cos(), theta.sin());
        let mut z: Vec<Vec2> = s.iter().map(|&sj| cmul(rot, sj) * (r / n)).collect();
        z.push(rot * (r / n));
        z
    }

    /// Cluster positions from chart values and a center of mass.
    pub fn positions_from_chart(&self, r: f64, theta: f64, s: &[Vec2], c_g: Vec2) -> Vec<Vec2> {
        jacobi_positions(&self.masses, &self.z_from_chart(r, theta, s), c_g)
    }

    /// Partial derivatives of the relative coordinates with respect to the
    /// chart variables: returns (dz/dr, dz/ds_p for each real component p).
    #[allow(clippy::needless_range_loop)]
    pub fn chart_jacobian_z(
        &self,
        r: f64,
        theta: f64,
        s: &[Vec2],
    ) -> (Vec<Vec2>, Vec<Vec<Vec2>>) {
        let k = self.k();
        let n2 = self.norm_sq_s1(s);
        let n = n2.sqrt();
        let rot = Vec2::new(theta.cos(), theta.sin());
        let z = self.z_from_chart(r, theta, s);
        let dz_dr: Vec<Vec2> = z.iter().map(|&zj| zj / r).collect();
        let mut dz_ds = Vec::with_capacity(self.sdim());
        for p in 0..self.sdim() {
            let j = p / 2;
            let nu = self.nu[j];
            let dn_dp = if p % 2 == 0 {
                nu * s[j].x / n
            } else {
                nu * s[j].y / n
            };
            // d/ds_p [ (s,1)_m / n ] = e_p delta / n - (s,1)_m dn/n^2
            let mut col = Vec::with_capacity(k - 1);
            for m in 0..k - 1 {
                let sm = if m < k - 2 { s[m] } else { Vec2::new(1.0, 0.0) };
                let mut d = -sm * (dn_dp / n2);
                if m == j {
                    let e = if p % 2 == 0 {
                        Vec2::new(1.0, 0.0)
                    } else {
                        Vec2::new(0.0, 1.0)
                    };
                    d += e / n;
                }
                col.push(cmul(rot, d) * r);
            }
            dz_ds.push(col);
        }
        (dz_dr, dz_ds)
    }

    /// Energy of the cluster in chart variables:
    /// H_G = rho^2/2 + mu^2/(2 r^2) + (r^2/2) F - V/r + (M_G/2) |cdot_G|^2.
    pub fn energy_shape(&self, shape: &ShapeState, cdot_g: Vec2) -> Result<f64> {
        let m_g: f64 = self.masses.iter().sum();
        let f = self.f_direct(&shape.s, &shape.omega);
        let v = self.v(&shape.s)?;
        Ok(shape.rho * shape.rho / 2.0
            + shape.mu * shape.mu / (2.0 * shape.r * shape.r)
            + shape.r * shape.r / 2.0 * f
            - v / shape.r
            + m_g / 2.0 * cdot_g.norm_sq())
    }

    /// Rotation-invariant chart distance induced by the Fubini-Study metric.
    pub fn shape_distance(&self, s1: &[Vec2], s2: &[Vec2]) -> f64 {
        if s1.is_empty() {
            return 0.0;
        }
        self.ray_distance(&self.s_to_z(s1), &self.s_to_z(s2))
    }

    /// Fubini-Study distance between the complex lines spanned by two
    /// relative-coordinate vectors (shape distance without going through the
    /// chart, so it is defined on the chart boundary too).
    ///
    /// Computed through the mass-metric rejection of one normalized ray from
    /// the other, which stays accurate for nearly coincident shapes where
    /// the arccos form loses all digits.
    pub fn ray_distance(&self, z1: &[Vec2], z2: &[Vec2]) -> f64 {
        let k = self.k();
        let norm = |z: &[Vec2]| -> f64 {
            z.iter()
                .enumerate()
                .map(|(j, zj)| self.nu[j] * zj.norm_sq())
                .sum::<f64>()
                .sqrt()
        };
        let n1 = norm(z1);
        let n2 = norm(z2);
        let a: Vec<Vec2> = z1.iter().map(|&z| z / n1).collect();
        let b: Vec<Vec2> = z2.iter().map(|&z| z / n2).collect();
        // complex pairing p = <<a, b>> (unit vectors)
        let mut p = Vec2::ZERO;
        for j in 0..k - 1 {
            p.x += self.nu[j] * a[j].dot(b[j]);
            p.y += self.nu[j] * a[j].cross(b[j]);
        }
        // rejection b - p a; its mass norm is sin(distance)
        let mut rej_sq = 0.0;
        for j in 0..k - 1 {
            let pa = Vec2::new(p.x * a[j].x - p.y * a[j].y, p.x * a[j].y + p.y * a[j].x);
            rej_sq += self.nu[j] * (b[j] - pa).norm_sq();
        }
        rej_sq.sqrt().min(1.0).asin()
    }

    /// Map a real shape vector to complex pairs (for solvers).
    pub fn vector_to_shape(&self, v: &DVector<f64>) -> Vec<Vec2> {
        self.vec_to_w(v)
    }

    /// Map a shape to its real vector of components.
    pub fn shape_to_vector(&self, s: &[Vec2]) -> DVector<f64> {
        self.w_to_vec(s)
    }
}
