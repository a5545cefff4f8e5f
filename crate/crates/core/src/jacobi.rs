//! Sequential Jacobi coordinates for a cluster of k bodies.
//!
//! The forward map takes cluster positions q_1..q_k to relative coordinates
//! z_1..z_{k-1} plus the cluster center of mass z_k = c_G:
//!
//!   z_j = q_{j+1} - (m_1 q_1 + ... + m_j q_j) / (m_1 + ... + m_j)
//!
//! The construction acts identically on x and y components, so the transform
//! is a real k x k matrix applied per component. With this ordering the
//! reduced mass matrix is diagonal, nu_j = M_j m_{j+1} / M_{j+1}, and the
//! intrinsic moment of inertia satisfies I0_G(q) = sum_j nu_j |z_j|^2.

use crate::error::{Error, Result};
use crate::nbody::SINGULAR_DISTANCE;
use crate::vec2::Vec2;
use nalgebra::DMatrix;

/// Jacobi frame of one cluster: the relative coordinates, the center of
/// mass, the diagonal reduced masses, and the position transform q = P z.
#[derive(Debug, Clone)]
pub struct JacobiFrame {
    /// Cluster masses in the order used by the construction.
    pub masses: Vec<f64>,
    /// Reduced masses nu_1..nu_{k-1} (the diagonal of the mass metric).
    pub nu: Vec<f64>,
    /// Relative coordinates z_1..z_{k-1}.
    pub frak_z: Vec<Vec2>,
    /// Cluster center of mass (= z_k).
    pub z_k: Vec2,
}

impl JacobiFrame {
    pub fn cluster_size(&self) -> usize {
        self.masses.len()
    }

    /// Mass-metric squared norm of the relative block: equals I0_G(q).
    pub fn i0(&self) -> f64 {
        self.frak_z
            .iter()
            .zip(&self.nu)
            .map(|(z, &nu)| nu * z.norm_sq())
            .sum()
    }
}

/// Reduced masses for the sequential construction.
pub fn reduced_masses(masses: &[f64]) -> Vec<f64> {
    let mut partial = masses[0];
    masses[1..]
        .iter()
        .map(|&m| {
            let nu = partial * m / (partial + m);
            partial += m;
            nu
        })
        .collect()
}

/// The k x k matrix Q of the forward map z = Q q (per planar component).
pub fn forward_matrix(masses: &[f64]) -> DMatrix<f64> {
    let k = masses.len();
    let mut q = DMatrix::zeros(k, k);
    let mut partial = 0.0;
    for j in 0..k - 1 {
        partial += masses[j];
        for i in 0..=j {
            q[(j, i)] = -masses[i] / partial;
        }
        q[(j, j + 1)] = 1.0;
    }
    let total: f64 = masses.iter().sum();
    for i in 0..k {
        q[(k - 1, i)] = masses[i] / total;
    }
    q
}

/// The inverse transform P with q = P z.
pub fn inverse_matrix(masses: &[f64]) -> DMatrix<f64> {
    forward_matrix(masses)
        .try_inverse()
        .expect("Jacobi transform is invertible")
}

/// Forward map for cluster positions (or, being linear, velocities).
pub fn jacobi_forward(q: &[Vec2], masses: &[f64]) -> JacobiFrame {
    let k = masses.len();
    assert!(k >= 2, "Jacobi construction needs k >= 2");
    assert_eq!(q.len(), k);
    let mut frak_z = Vec::with_capacity(k - 1);
    let mut partial_m = masses[0];
    let mut partial_c = q[0] * masses[0];
    for j in 1..k {
        frak_z.push(q[j] - partial_c / partial_m);
        partial_c += q[j] * masses[j];
        partial_m += masses[j];
    }
    JacobiFrame {
        masses: masses.to_vec(),
        nu: reduced_masses(masses),
        frak_z,
        z_k: partial_c / partial_m,
    }
}

/// Velocities mapped through the same linear transform.
pub fn jacobi_velocity(qdot: &[Vec2], masses: &[f64]) -> (Vec<Vec2>, Vec2) {
    let frame = jacobi_forward(qdot, masses);
    (frame.frak_z, frame.z_k)
}

/// Inverse map: positions from a frame. Round-trips with `jacobi_forward`.
pub fn jacobi_inverse(frame: &JacobiFrame) -> Vec<Vec2> {
    jacobi_positions(&frame.masses, &frame.frak_z, frame.z_k)
}

/// Positions from relative coordinates and a center of mass.
pub fn jacobi_positions(masses: &[f64], frak_z: &[Vec2], c_g: Vec2) -> Vec<Vec2> {
    let k = masses.len();
    assert_eq!(frak_z.len(), k - 1);
    let p = inverse_matrix(masses);
    let mut q = vec![Vec2::ZERO; k];
    for i in 0..k {
        let mut acc = Vec2::ZERO;
        for j in 0..k - 1 {
            acc += frak_z[j] * p[(i, j)];
        }
        acc += c_g * p[(i, k - 1)];
        q[i] = acc;
    }
    q
}

/// Cluster potential expressed in relative coordinates: U(frak_z) equals the
/// internal potential of the reconstructed configuration and is independent
/// of the center of mass.
pub fn potential_z(masses: &[f64], frak_z: &[Vec2]) -> Result<f64> {
    let q = jacobi_positions(masses, frak_z, Vec2::ZERO);
    let mut u = 0.0;
    for i in 0..q.len() {
        for j in (i + 1)..q.len() {
            let d = (q[i] - q[j]).norm();
            if d < SINGULAR_DISTANCE {
                return Err(Error::SingularConfiguration(i, j));
            }
            u += masses[i] * masses[j] / d;
        }
    }
    Ok(u)
}

/// Gradient of U with respect to the relative coordinates (real components,
/// layout [z1.x, z1.y, z2.x, ...]). The chain rule through the linear map
/// q = P z gives grad_z = P^T grad_q.
#[allow(clippy::needless_range_loop)]
pub fn potential_z_gradient(masses: &[f64], frak_z: &[Vec2]) -> Result<Vec<f64>> {
    let k = masses.len();
    let q = jacobi_positions(masses, frak_z, Vec2::ZERO);
    let mut grad_q = vec![Vec2::ZERO; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = (q[i] - q[j]).norm();
            if d < SINGULAR_DISTANCE {
                return Err(Error::SingularConfiguration(i, j));
            }
            let g = (q[j] - q[i]) * (masses[i] * masses[j] / (d * d * d));
            grad_q[i] += g;
            grad_q[j] -= g;
        }
    }
    let p = inverse_matrix(masses);
    let mut grad_z = vec![0.0; 2 * (k - 1)];
    for j in 0..k - 1 {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for i in 0..k {
            gx += p[(i, j)] * grad_q[i].x;
            gy += p[(i, j)] * grad_q[i].y;
        }
        grad_z[2 * j] = gx;
        grad_z[2 * j + 1] = gy;
    }
    Ok(grad_z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_frame_matches_reduced_mass() {
        let masses = [1.0, 1.0];
        let q = [Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)];
        let f = jacobi_forward(&q, &masses);
        assert_eq!(f.frak_z[0], Vec2::new(2.0, 0.0));
        assert_eq!(f.z_k, Vec2::ZERO);
        assert!((f.nu[0] - 0.5).abs() < 1e-15);
        assert!((f.i0() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mass_norm_equals_intrinsic_inertia() {
        let masses = [1.0, 2.0, 0.5, 1.3];
        let q = [
            Vec2::new(0.3, -0.4),
            Vec2::new(-1.0, 0.9),
            Vec2::new(0.7, 1.2),
            Vec2::new(-0.2, -1.1),
        ];
        let f = jacobi_forward(&q, &masses);
        let m_g: f64 = masses.iter().sum();
        let c: Vec2 = q
            .iter()
            .zip(&masses)
            .fold(Vec2::ZERO, |acc, (p, &m)| acc + *p * m)
            / m_g;
        let i0: f64 = q
            .iter()
            .zip(&masses)
            .map(|(p, &m)| m * (*p - c).norm_sq())
            .sum();
        assert!((f.i0() - i0).abs() < 1e-13 * i0);
    }

    #[test]
    fn rotation_equivariance() {
        let masses = [1.0, 2.0, 0.5];
        let q = [
            Vec2::new(0.3, -0.4),
            Vec2::new(-1.0, 0.9),
            Vec2::new(0.7, 1.2),
        ];
        let alpha = 0.73;
        let q_rot: Vec<Vec2> = q.iter().map(|p| p.rotate(alpha)).collect();
        let f = jacobi_forward(&q, &masses);
        let f_rot = jacobi_forward(&q_rot, &masses);
        for (z, zr) in f.frak_z.iter().zip(&f_rot.frak_z) {
            assert!((z.rotate(alpha) - *zr).norm() < 1e-14);
        }
        assert!((f.z_k.rotate(alpha) - f_rot.z_k).norm() < 1e-14);
    }

    #[test]
    fn round_trip_random_clusters() {
        let masses = [1.0, 2.0, 0.5, 1.3];
        let mut seed = 42u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..100 {
            let q: Vec<Vec2> = (0..4).map(|_| Vec2::new(next(), next())).collect();
            let f = jacobi_forward(&q, &masses);
            let back = jacobi_inverse(&f);
            for (a, b) in q.iter().zip(&back) {
                assert!((*a - *b).norm() < 1e-12 * (1.0 + a.norm()));
            }
        }
    }

    #[test]
    fn collapsed_frame_reconstructs_to_center() {
        let masses = [1.0, 2.0, 0.5];
        let c = Vec2::new(0.7, -0.3);
        let q = jacobi_positions(&masses, &[Vec2::ZERO, Vec2::ZERO], c);
        for p in q {
            assert!((p - c).norm() < 1e-14);
        }
    }

    #[test]
    fn potential_independent_of_center() {
        let masses = [1.0, 2.0, 0.5];
        let z = [Vec2::new(1.0, 0.2), Vec2::new(-0.4, 0.9)];
        let u = potential_z(&masses, &z).unwrap();
        // same relative coordinates with a shifted center give the same q-potential
        let q = jacobi_positions(&masses, &z, Vec2::new(5.0, -3.0));
        let mut u_direct = 0.0;
        for i in 0..3 {
            for j in (i + 1)..3 {
                u_direct += masses[i] * masses[j] / (q[i] - q[j]).norm();
            }
        }
        assert!((u - u_direct).abs() < 1e-13 * u);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gradient_matches_finite_differences() {
        let masses = [1.0, 2.0, 0.5];
        let z = [Vec2::new(1.0, 0.2), Vec2::new(-0.4, 0.9)];
        let grad = potential_z_gradient(&masses, &z).unwrap();
        let h = 1e-6;
        for p in 0..4 {
            let mut zp = z;
            let mut zm = z;
            match p {
                0 => {
                    zp[0].x += h;
                    zm[0].x -= h;
                }
                1 => {
                    zp[0].y += h;
                    zm[0].y -= h;
                }
                2 => {
                    zp[1].x += h;
                    zm[1].x -= h;
                }
                _ => {
                    zp[1].y += h;
                    zm[1].y -= h;
                }
            }
            let fd = (potential_z(&masses, &zp).unwrap() - potential_z(&masses, &zm).unwrap())
                / (2.0 * h);
            assert!((grad[p] - fd).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }
}
