//! Cartesian ground truth for the planar n-body problem: masses, states,
//! potentials, forces, and the per-cluster scalars (size, angular momenta,
//! energies) that every other module consumes.
//!
//! The gravitational constant is fixed to 1 throughout; masses carry their
//! own units and lengths/times follow from G = 1.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

/// Pairwise distances below this raise a singular-configuration error
/// instead of propagating infinities.
pub const SINGULAR_DISTANCE: f64 = 1e-300;

/// Masses of the n bodies (all strictly positive, n >= 2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassSystem {
    masses: Vec<f64>,
}

impl MassSystem {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidMasses("need at least two bodies".into()));
        }
        if let Some(m) = masses.iter().find(|&&m| m <= 0.0 || !m.is_finite()) {
            return Err(Error::InvalidMasses(format!(
                "masses must be strictly positive, got {m}"
            )));
        }
        Ok(MassSystem { masses })
    }

    pub fn body_count(&self) -> usize {
        self.masses.len()
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn cluster_mass(&self, members: &[usize]) -> f64 {
        members.iter().map(|&i| self.masses[i]).sum()
    }
}

/// Positions and velocities of all bodies at one physical time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub q: Vec<Vec2>,
    pub qdot: Vec<Vec2>,
}

impl State {
    pub fn new(t: f64, q: Vec<Vec2>, qdot: Vec<Vec2>) -> Self {
        assert_eq!(q.len(), qdot.len());
        State { t, q, qdot }
    }

    /// Flatten to [x1, y1, ..., xn, yn, vx1, vy1, ...] for the integrator.
    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.q.len();
        let mut y = Vec::with_capacity(4 * n);
        for p in &self.q {
            y.push(p.x);
            y.push(p.y);
        }
        for v in &self.qdot {
            y.push(v.x);
            y.push(v.y);
        }
        y
    }

    pub fn from_flat(t: f64, y: &[f64]) -> Self {
        let n = y.len() / 4;
        let q = (0..n).map(|i| Vec2::new(y[2 * i], y[2 * i + 1])).collect();
        let qdot = (0..n)
            .map(|i| Vec2::new(y[2 * n + 2 * i], y[2 * n + 2 * i + 1]))
            .collect();
        State { t, q, qdot }
    }

    pub fn min_pair_distance(&self, members: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                best = best.min((self.q[i] - self.q[j]).norm());
            }
        }
        best
    }
}

/// Disjoint clusters covering all bodies plus a distinguished focus cluster
/// with at least two members (the one tracked toward collision).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterPartition {
    clusters: Vec<Vec<usize>>,
    focus: usize,
}

impl ClusterPartition {
    pub fn new(clusters: Vec<Vec<usize>>, focus: usize) -> Result<Self> {
        let n: usize = clusters.iter().map(|c| c.len()).sum();
        let mut seen = vec![false; n];
        for c in &clusters {
            for &i in c {
                if i >= n || seen[i] {
                    return Err(Error::InvalidPartition(
                        "clusters must be disjoint and cover 0..n".into(),
                    ));
                }
                seen[i] = true;
            }
        }
        if focus >= clusters.len() || clusters[focus].len() < 2 {
            return Err(Error::InvalidPartition(
                "focus cluster must exist and have at least two members".into(),
            ));
        }
        Ok(ClusterPartition { clusters, focus })
    }

    /// Single focus cluster, all remaining bodies as singleton clusters.
    pub fn focus_with_rest(members: Vec<usize>, n: usize) -> Result<Self> {
        let mut clusters = vec![members.clone()];
        for i in 0..n {
            if !members.contains(&i) {
                clusters.push(vec![i]);
            }
        }
        ClusterPartition::new(clusters, 0)
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn focus(&self) -> &[usize] {
        &self.clusters[self.focus]
    }

    pub fn is_external(&self, i: usize) -> bool {
        !self.clusters[self.focus].contains(&i)
    }

    pub fn external_members(&self) -> Vec<usize> {
        let n: usize = self.clusters.iter().map(|c| c.len()).sum();
        (0..n).filter(|&i| self.is_external(i)).collect()
    }
}

/// All per-cluster scalar diagnostics for the focus cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterObservables {
    pub m_g: f64,
    pub c_g: Vec2,
    pub cdot_g: Vec2,
    /// Intrinsic moment of inertia about the moving cluster center of mass.
    pub i0_g: f64,
    /// Cluster size r = sqrt(I0).
    pub r_g: f64,
    /// Moment of inertia about the supplied collision point, when given.
    pub j_g: Option<f64>,
    pub u_g: f64,
    pub u_ext: f64,
    pub k_g: f64,
    pub h_g: f64,
    /// Cluster angular momentum about the origin.
    pub mu_g: f64,
    /// Intrinsic cluster angular momentum about the moving center of mass.
    pub mu0_g: f64,
    /// mu_g corrected for the center-of-mass drift; equals mu0_g identically.
    pub mu: f64,
}

fn check_pair(qi: Vec2, qj: Vec2, i: usize, j: usize) -> Result<f64> {
    let d = (qi - qj).norm();
    if d < SINGULAR_DISTANCE {
        return Err(Error::SingularConfiguration(i, j));
    }
    Ok(d)
}

/// Total, focus-internal, and focus-external potential energies.
///
/// `u_ext` sums exactly the pairs with one index inside the focus cluster and
/// one outside; pairs internal to other clusters appear only in `u_total`.
pub fn potential_terms(
    state: &State,
    masses: &MassSystem,
    part: &ClusterPartition,
) -> Result<(f64, f64, f64)> {
    let n = masses.body_count();
    let focus = part.focus();
    let mut u_total = 0.0;
    let mut u_g = 0.0;
    let mut u_ext = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = check_pair(state.q[i], state.q[j], i, j)?;
            let u = masses.mass(i) * masses.mass(j) / d;
            u_total += u;
            let in_i = focus.contains(&i);
            let in_j = focus.contains(&j);
            if in_i && in_j {
                u_g += u;
            } else if in_i != in_j {
                u_ext += u;
            }
        }
    }
    Ok((u_total, u_g, u_ext))
}

/// Accelerations a_i = sum_{j != i} m_j (q_j - q_i) / |q_j - q_i|^3.
pub fn accelerations(state: &State, masses: &MassSystem) -> Result<Vec<Vec2>> {
    let n = masses.body_count();
    let mut acc = vec![Vec2::ZERO; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = check_pair(state.q[i], state.q[j], i, j)?;
            let rij = state.q[j] - state.q[i];
            let f = rij / (d * d * d);
            acc[i] += f * masses.mass(j);
            acc[j] -= f * masses.mass(i);
        }
    }
    Ok(acc)
}

/// Gradient of the potential with respect to q_i: grad_i U = m_i a_i.
pub fn potential_gradient(state: &State, masses: &MassSystem) -> Result<Vec<Vec2>> {
    let acc = accelerations(state, masses)?;
    Ok(acc
        .iter()
        .zip(masses.masses())
        .map(|(a, &m)| *a * m)
        .collect())
}

/// Gradient of the focus-external potential with respect to the focus-cluster
/// bodies: grad_i U_ext = sum_{j outside} m_i m_j (q_j - q_i)/|q_j - q_i|^3.
pub fn u_ext_gradient(
    state: &State,
    masses: &MassSystem,
    part: &ClusterPartition,
) -> Result<Vec<Vec2>> {
    let focus = part.focus();
    let ext = part.external_members();
    let mut grad = vec![Vec2::ZERO; focus.len()];
    for (a, &i) in focus.iter().enumerate() {
        for &j in &ext {
            let d = check_pair(state.q[i], state.q[j], i, j)?;
            grad[a] += (state.q[j] - state.q[i]) * (masses.mass(i) * masses.mass(j) / (d * d * d));
        }
    }
    Ok(grad)
}

pub fn center_of_mass(state: &State, masses: &MassSystem, members: &[usize]) -> (Vec2, Vec2) {
    let m_g = masses.cluster_mass(members);
    let mut c = Vec2::ZERO;
    let mut cdot = Vec2::ZERO;
    for &i in members {
        c += state.q[i] * masses.mass(i);
        cdot += state.qdot[i] * masses.mass(i);
    }
    (c / m_g, cdot / m_g)
}

/// All focus-cluster scalars. `l_g` is the (externally estimated) collision
/// point; `j_g` is populated only when it is supplied.
pub fn cluster_observables(
    state: &State,
    masses: &MassSystem,
    part: &ClusterPartition,
    l_g: Option<Vec2>,
) -> Result<ClusterObservables> {
    let focus = part.focus();
    let m_g = masses.cluster_mass(focus);
    let (c_g, cdot_g) = center_of_mass(state, masses, focus);

    let mut i0_g = 0.0;
    let mut k_g = 0.0;
    let mut mu_g = 0.0;
    let mut mu0_g = 0.0;
    for &i in focus {
        let m = masses.mass(i);
        let rel = state.q[i] - c_g;
        let vel_rel = state.qdot[i] - cdot_g;
        i0_g += m * rel.norm_sq();
        k_g += 0.5 * m * state.qdot[i].norm_sq();
        mu_g += m * state.q[i].cross(state.qdot[i]);
        mu0_g += m * rel.cross(vel_rel);
    }
    let (_, u_g, u_ext) = potential_terms(state, masses, part)?;
    let mu = mu_g - m_g * c_g.cross(cdot_g);
    let j_g = l_g.map(|l| {
        focus
            .iter()
            .map(|&i| masses.mass(i) * (state.q[i] - l).norm_sq())
            .sum()
    });

    Ok(ClusterObservables {
        m_g,
        c_g,
        cdot_g,
        i0_g,
        r_g: i0_g.sqrt(),
        j_g,
        u_g,
        u_ext,
        k_g,
        h_g: k_g - u_g,
        mu_g,
        mu0_g,
        mu,
    })
}

/// Moment of inertia of a body set about fixed reference points L_i,
/// J_P = sum m_i |q_i - L_i|^2, with its first time derivative.
pub fn j_about(state: &State, masses: &MassSystem, members: &[usize], l: &[Vec2]) -> (f64, f64) {
    let mut j = 0.0;
    let mut jdot = 0.0;
    for (a, &i) in members.iter().enumerate() {
        let rel = state.q[i] - l[a];
        j += masses.mass(i) * rel.norm_sq();
        jdot += 2.0 * masses.mass(i) * state.qdot[i].dot(rel);
    }
    (j, jdot)
}

/// Kinetic energy of a body set.
pub fn kinetic_energy(state: &State, masses: &MassSystem, members: &[usize]) -> f64 {
    members
        .iter()
        .map(|&i| 0.5 * masses.mass(i) * state.qdot[i].norm_sq())
        .sum()
}

/// Potential energy internal to a body set.
pub fn potential_of(state: &State, masses: &MassSystem, members: &[usize]) -> Result<f64> {
    let mut u = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let d = check_pair(state.q[i], state.q[j], i, j)?;
            u += masses.mass(i) * masses.mass(j) / d;
        }
    }
    Ok(u)
}

/// Boundary term g(t) in the cluster Lagrange-Jacobi identity
/// Jdd_G = 4 K_G - 2 U_G + g(t), read off the identity's derivation:
/// g = 2 sum_{i in G} (grad_i U_ext, q_i - L_G).
pub fn lagrange_jacobi_boundary_focus(
    state: &State,
    masses: &MassSystem,
    part: &ClusterPartition,
    l_g: Vec2,
) -> Result<f64> {
    let grad_ext = u_ext_gradient(state, masses, part)?;
    Ok(part
        .focus()
        .iter()
        .zip(&grad_ext)
        .map(|(&i, g)| 2.0 * g.dot(state.q[i] - l_g))
        .sum())
}

/// Boundary term for the all-bodies moment J_g about per-body limits L_i:
/// Jdd_g = 4 K - 2 U - 2 sum_i (grad_i U_cross, L_i), where U_cross sums the
/// pairs joining distinct clusters.
pub fn lagrange_jacobi_boundary_global(
    state: &State,
    masses: &MassSystem,
    part: &ClusterPartition,
    l: &[Vec2],
) -> Result<f64> {
    let n = masses.body_count();
    // cluster id per body
    let mut cluster_of = vec![0usize; n];
    for (k, c) in part.clusters().iter().enumerate() {
        for &i in c {
            cluster_of[i] = k;
        }
    }
    let mut grad_cross = vec![Vec2::ZERO; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if cluster_of[i] == cluster_of[j] {
                continue;
            }
            let d = check_pair(state.q[i], state.q[j], i, j)?;
            let g = (state.q[j] - state.q[i]) * (masses.mass(i) * masses.mass(j) / (d * d * d));
            grad_cross[i] += g;
            grad_cross[j] -= g;
        }
    }
    Ok((0..n).map(|i| -2.0 * grad_cross[i].dot(l[i])).sum())
}

/// Explicit mass-dependent lower bound D for sqrt(J_P) * U_P, summed over the
/// pairs that share a collision limit point (pairs inside one cluster).
pub fn sundman_constant(masses: &MassSystem, part: &ClusterPartition, members: &[usize]) -> f64 {
    let m_p = masses.cluster_mass(members);
    let mut sum = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let same_cluster = part
                .clusters()
                .iter()
                .any(|c| c.contains(&i) && c.contains(&j));
            if same_cluster {
                sum += masses.mass(i).powf(1.5) * masses.mass(j).powf(1.5);
            }
        }
    }
    sum / m_p.sqrt()
}

/// Mutual-distance form of the cluster moment of inertia about L_G:
/// J_G = M_G^{-1} sum_{j<k in G} m_j m_k |q_j - q_k|^2 + M_G |c_G - L_G|^2.
pub fn j_mutual_distance_form(
    state: &State,
    masses: &MassSystem,
    members: &[usize],
    l_g: Vec2,
) -> f64 {
    let m_g = masses.cluster_mass(members);
    let (c_g, _) = center_of_mass(state, masses, members);
    let mut pair_sum = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            pair_sum += masses.mass(i) * masses.mass(j) * (state.q[i] - state.q[j]).norm_sq();
        }
    }
    pair_sum / m_g + m_g * (c_g - l_g).norm_sq()
}

// ---------------------------------------------------------------------------
// Generic-scalar force evaluation for the integrator (f64 or double-double).
// State layout matches State::to_flat.
// ---------------------------------------------------------------------------

/// Newtonian right-hand side dy/dt for the flat state layout.
pub fn newton_rhs<S: Real>(masses: &[f64], y: &[S], dy: &mut [S]) {
    let n = masses.len();
    debug_assert_eq!(y.len(), 4 * n);
    // positions' derivatives are the velocities
    dy[..2 * n].copy_from_slice(&y[2 * n..]);
    for a in dy[2 * n..].iter_mut() {
        *a = S::zero();
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[2 * j] - y[2 * i];
            let dy_ = y[2 * j + 1] - y[2 * i + 1];
            let d2 = dx * dx + dy_ * dy_;
            let d = d2.sqrt();
            let inv_d3 = S::one() / (d2 * d);
            let fx = dx * inv_d3;
            let fy = dy_ * inv_d3;
            let mi = S::from_f64(masses[i]);
            let mj = S::from_f64(masses[j]);
            dy[2 * n + 2 * i] += fx * mj;
            dy[2 * n + 2 * i + 1] += fy * mj;
            dy[2 * n + 2 * j] -= fx * mi;
            dy[2 * n + 2 * j + 1] -= fy * mi;
        }
    }
}

/// Squared cluster size I0_G evaluated in integrator precision.
pub fn cluster_i0<S: Real>(masses: &[f64], members: &[usize], y: &[S]) -> S {
    let mut m_g = S::zero();
    let mut cx = S::zero();
    let mut cy = S::zero();
    for &i in members {
        let m = S::from_f64(masses[i]);
        m_g += m;
        cx += y[2 * i] * m;
        cy += y[2 * i + 1] * m;
    }
    cx = cx / m_g;
    cy = cy / m_g;
    let mut i0 = S::zero();
    for &i in members {
        let dx = y[2 * i] - cx;
        let dy = y[2 * i + 1] - cy;
        i0 += S::from_f64(masses[i]) * (dx * dx + dy * dy);
    }
    i0
}

/// Intrinsic angular momentum of a cluster in integrator precision.
pub fn cluster_mu0<S: Real>(masses: &[f64], members: &[usize], y: &[S]) -> S {
    let n = masses.len();
    let mut m_g = S::zero();
    let mut cx = S::zero();
    let mut cy = S::zero();
    let mut cvx = S::zero();
    let mut cvy = S::zero();
    for &i in members {
        let m = S::from_f64(masses[i]);
        m_g += m;
        cx += y[2 * i] * m;
        cy += y[2 * i + 1] * m;
        cvx += y[2 * n + 2 * i] * m;
        cvy += y[2 * n + 2 * i + 1] * m;
    }
    cx = cx / m_g;
    cy = cy / m_g;
    cvx = cvx / m_g;
    cvy = cvy / m_g;
    let mut mu = S::zero();
    for &i in members {
        let dx = y[2 * i] - cx;
        let dy = y[2 * i + 1] - cy;
        let dvx = y[2 * n + 2 * i] - cvx;
        let dvy = y[2 * n + 2 * i + 1] - cvy;
        mu += S::from_f64(masses[i]) * (dx * dvy - dy * dvx);
    }
    mu
}

/// Minimum pairwise distance within a cluster, integrator precision.
pub fn cluster_min_distance<S: Real>(members: &[usize], y: &[S]) -> S {
    let mut best: Option<S> = None;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let d = (dx * dx + dy * dy).sqrt();
            best = Some(match best {
                Some(b) => b.min(d),
                None => d,
            });
        }
    }
    best.expect("cluster has at least two members")
}
