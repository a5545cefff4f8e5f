//! Cone constants, exponentially shrinking isolating segments around a
//! perturbed orbit, and shadowing-distance diagnostics.
//!
//! Everything here is sampled numerical verification: quasi-random points on
//! the moving tube boundary, with the sampled sup/inf inflated by the
//! observed spread. It produces falsifiable evidence for the differential
//! sign conditions, not a rigorous enclosure.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest eigenvalue of the symmetric part (the matrix measure bounding
/// flow expansion rates).
pub fn logarithmic_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part (contraction counterpart).
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values[0]
}

/// Central finite-difference Jacobian of a vector field.
pub fn jacobian_fd(
    field: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let hj = h * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += hj;
        xm[j] -= hj;
        let fp = field(&xp);
        let fm = field(&xm);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * hj);
        }
    }
    jac
}

/// Matrix sign function by scaled Newton iteration. Requires no eigenvalues
/// on the imaginary axis (the caller shifts by the classification tolerance).
fn matrix_sign(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut x = a.clone();
    for _ in 0..100 {
        let det: f64 = x.determinant().abs();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NoConvergence("matrix sign: singular iterate".into()));
        }
        let c = det.powf(-1.0 / n as f64);
        let xs = &x * c;
        let inv = xs
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NoConvergence("matrix sign: inversion failed".into()))?;
        let next = (&xs + inv) * 0.5;
        let delta = (&next - &x).norm();
        x = next;
        if delta < 1e-13 * x.norm().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence(
        "matrix sign iteration did not converge".into(),
    ))
}

/// Stable / center-unstable splitting of a linearization.
/// Eigenvalues with real part below -tol form the stable block; everything
/// else (including near-zero center directions) lands in the cu block.
pub fn invariant_split(a: &DMatrix<f64>, tol: f64) -> Result<(usize, DMatrix<f64>)> {
    let n = a.nrows();
    let shifted = a + DMatrix::identity(n, n) * tol;
    let s = matrix_sign(&shifted)?;
    let p_cu = (DMatrix::identity(n, n) + &s) * 0.5;
    let p_s = (DMatrix::identity(n, n) - &s) * 0.5;
    let u = p_cu.trace().round() as usize;
    let mut basis = DMatrix::zeros(n, n);
    if u > 0 {
        let q = p_cu.col_piv_qr().q();
        basis.view_mut((0, 0), (n, u)).copy_from(&q.view((0, 0), (n, u)));
    }
    if u < n {
        let q = p_s.col_piv_qr().q();
        basis
            .view_mut((0, u), (n, n - u))
            .copy_from(&q.view((0, 0), (n, n - u)));
    }
    if basis.determinant().abs() < 1e-12 {
        return Err(Error::InvalidSegment(
            "invariant subspaces do not span the space".into(),
        ));
    }
    Ok((u, basis))
}

/// Cone constants of a field over a ball, in linearization-adapted
/// coordinates.
#[derive(Debug, Clone)]
pub struct ConeConstants {
    /// sup over the ball of mu_log(df_y/dy) + ||df_y/dx||.
    pub mu_arrow: f64,
    /// inf over the ball of m_l(df_x/dx) - sup ||df_x/dy||.
    pub xi_arrow: f64,
    pub radius: f64,
    pub center: DVector<f64>,
    pub u_dim: usize,
    pub s_dim: usize,
    /// Columns: center-unstable block basis, then stable block basis.
    pub basis: DMatrix<f64>,
    pub basis_inv: DMatrix<f64>,
    /// mu_arrow < 0 and mu_arrow < xi_arrow over the ball.
    pub cone_condition: bool,
    pub samples: usize,
}

pub struct ConeOptions {
    pub sample_count: usize,
    pub seed: u64,
    /// Real-part threshold separating stable from center directions.
    pub classification_tol: f64,
    pub fd_step: f64,
}

impl Default for ConeOptions {
    fn default() -> Self {
        ConeOptions {
            sample_count: 512,
            seed: 0xc0de,
            classification_tol: 1e-9,
            fd_step: 1e-6,
        }
    }
}

/// Sample the cone constants of a field over the ball B(center, radius).
/// The split comes from the Jacobian at the center; sup/inf estimates are
/// inflated by 10% of their sampled spread.
pub fn cone_constants(
    field: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    center: &DVector<f64>,
    radius: f64,
    opts: &ConeOptions,
) -> Result<ConeConstants> {
    let n = center.len();
    let a0 = jacobian_fd(field, center, opts.fd_step);
    let (u, basis) = invariant_split(&a0, opts.classification_tol)?;
    let basis_inv = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidSegment("basis not invertible".into()))?;
    let s_dim = n - u;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut mu_vals = Vec::with_capacity(opts.sample_count + 1);
    let mut xi_vals = Vec::with_capacity(opts.sample_count + 1);
    for k in 0..=opts.sample_count {
        // center first, then uniform points in the ball (split coordinates)
        let z = if k == 0 {
            center.clone()
        } else {
            let mut dir = DVector::zeros(n);
            for p in 0..n {
                dir[p] = rng.gen_range(-1.0..1.0f64);
            }
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            let rad = radius * rng.gen_range(0.0..1.0f64).powf(1.0 / n as f64);
            center + &basis * dir.scale(rad / norm)
        };
        let jac = jacobian_fd(field, &z, opts.fd_step);
        let jt = &basis_inv * jac * &basis;
        let j_xx = jt.view((0, 0), (u, u)).clone_owned();
        let j_xy = jt.view((0, u), (u, s_dim)).clone_owned();
        let j_yx = jt.view((u, 0), (s_dim, u)).clone_owned();
        let j_yy = jt.view((u, u), (s_dim, s_dim)).clone_owned();
        mu_vals.push(logarithmic_norm(&j_yy) + spectral_norm(&j_yx));
        if u > 0 {
            xi_vals.push(min_symmetric_eigenvalue(&j_xx) - spectral_norm(&j_xy));
        }
    }
    let mu_max = mu_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mu_min = mu_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let mu_arrow = mu_max + 0.1 * (mu_max - mu_min);
    let (xi_arrow, _) = if u > 0 {
        let xi_max = xi_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let xi_min = xi_vals.iter().cloned().fold(f64::INFINITY, f64::min);
        (xi_min - 0.1 * (xi_max - xi_min), xi_max)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(ConeConstants {
        mu_arrow,
        xi_arrow,
        radius,
        center: center.clone(),
        u_dim: u,
        s_dim,
        basis,
        basis_inv,
        cone_condition: mu_arrow < 0.0 && mu_arrow < xi_arrow,
        samples: mu_vals.len(),
    })
}

// ---------------------------------------------------------------------------
// Isolating segment verification.
// ---------------------------------------------------------------------------

/// Perturbation model entering the exit/entry expressions.
pub enum DeltaModel {
    Zero,
    /// Worst-case direction with magnitude a e^{alpha t}.
    Envelope,
    /// Recorded perturbation samples (ambient coordinates), interpolated.
    Series(Vec<(f64, DVector<f64>)>),
}

/// Exponentially shrinking tube around a perturbed orbit.
pub struct SegmentSpec {
    /// Perturbed orbit samples in ambient coordinates, ascending in t.
    pub z_p: Vec<(f64, DVector<f64>)>,
    /// Tube radius scale (the tube half-width is radius * e^{gamma t}).
    pub radius: f64,
    pub gamma: f64,
    pub t0: f64,
    pub t1: f64,
    /// Exponential bound (a, alpha) on the perturbation, alpha < gamma.
    pub delta_bound: (f64, f64),
    pub delta: DeltaModel,
    pub time_slices: usize,
    pub sphere_samples: usize,
    pub seed: u64,
}

impl SegmentSpec {
    pub fn validate(&self, cone: &ConeConstants) -> Result<()> {
        let (_, alpha) = self.delta_bound;
        if !(self.gamma < 0.0 && cone.mu_arrow < self.gamma && self.gamma < cone.xi_arrow) {
            return Err(Error::InvalidSegment(format!(
                "gamma {} must satisfy mu_arrow {} < gamma < xi_arrow {} and be negative",
                self.gamma, cone.mu_arrow, cone.xi_arrow
            )));
        }
        if alpha >= self.gamma {
            return Err(Error::InvalidSegment(format!(
                "alpha {} must lie below gamma {}",
                alpha, self.gamma
            )));
        }
        if self.z_p.len() < 2 || self.t1 <= self.t0 {
            return Err(Error::InvalidSegment("degenerate sampling window".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentReport {
    /// Min over sampled exit boundary of DL^- . (1, f); None when the
    /// center-unstable block is empty (no exit set).
    pub min_exit_margin: Option<f64>,
    /// Max over sampled entry boundary of DL^+ . (1, f).
    pub max_entry_margin: f64,
    /// Closed-form sufficient margins evaluated at their worst slice.
    pub sufficient_exit_min: f64,
    pub sufficient_entry_max: f64,
    /// Times from which the closed-form exit/entry margins are positive /
    /// negative.
    pub t_thresholds: (f64, f64),
    pub verified: bool,
    pub sample_count: usize,
    /// Per-slice (t, min exit, max entry).
    pub margin_series: Vec<(f64, f64, f64)>,
}

fn interp_series(series: &[(f64, DVector<f64>)], t: f64) -> DVector<f64> {
    let n = series.len();
    if t <= series[0].0 {
        return series[0].1.clone();
    }
    if t >= series[n - 1].0 {
        return series[n - 1].1.clone();
    }
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if series[mid].0 <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (ta, ya) = &series[lo];
    let (tb, yb) = &series[hi];
    let w = (t - ta) / (tb - ta);
    ya * (1.0 - w) + yb * w
}

/// Sample the differential exit/entry conditions of the shrinking tube
/// around the perturbed orbit and report direct and sufficient margins.
pub fn verify_segment(
    spec: &SegmentSpec,
    cone: &ConeConstants,
    field: &dyn Fn(&DVector<f64>) -> DVector<f64>,
) -> Result<SegmentReport> {
    spec.validate(cone)?;
    let (a_bound, alpha) = spec.delta_bound;
    let u = cone.u_dim;
    let s_dim = cone.s_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // closed-form thresholds from the sufficient margins
    let denom = spec.gamma - alpha;
    let t_thr_exit = if u == 0 || a_bound <= 0.0 {
        f64::NEG_INFINITY
    } else {
        (a_bound / (spec.radius * (cone.xi_arrow - spec.gamma))).ln() / denom
    };
    let t_thr_entry = if a_bound <= 0.0 {
        f64::NEG_INFINITY
    } else {
        (a_bound / (spec.radius * (spec.gamma - cone.mu_arrow))).ln() / denom
    };
    let t_verified_from = t_thr_exit.max(t_thr_entry).max(spec.t0);

    // transformed field and orbit
    let to_split = |z: &DVector<f64>| cone.basis_inv.clone() * (z - &cone.center);
    let from_split = |zeta: &DVector<f64>| &cone.center + &cone.basis * zeta;
    let f_split = |zeta: &DVector<f64>| -> DVector<f64> {
        let z = from_split(zeta);
        &cone.basis_inv * field(&z)
    };

    let mut margin_series = Vec::with_capacity(spec.time_slices);
    let mut min_exit_verified = f64::INFINITY;
    let mut max_entry_verified = f64::NEG_INFINITY;
    let mut suff_exit_min = f64::INFINITY;
    let mut suff_entry_max = f64::NEG_INFINITY;
    let mut samples_taken = 0usize;

    for slice in 0..spec.time_slices {
        let t = spec.t0
            + (spec.t1 - spec.t0) * slice as f64 / (spec.time_slices.max(2) - 1) as f64;
        let rho = spec.radius * (spec.gamma * t).exp();
        let zp = interp_series(&spec.z_p, t);
        let zetap = to_split(&zp);
        // tube must stay inside the cone-constant region
        if zetap.norm() + 2f64.sqrt() * rho > cone.radius {
            return Err(Error::InvalidSegment(format!(
                "tube leaves the cone-constant ball at t = {t}"
            )));
        }
        let fp = f_split(&zetap);
        let env = a_bound * (alpha * t).exp();
        let delta_split = match &spec.delta {
            DeltaModel::Series(series) => Some(&cone.basis_inv * interp_series(series, t)),
            _ => None,
        };

        let mut exit_min_t = f64::INFINITY;
        let mut entry_max_t = f64::NEG_INFINITY;
        for _ in 0..spec.sphere_samples {
            // exit face: x on the sphere, y in the ball
            if u > 0 {
                let mut zeta = zetap.clone();
                let mut xdir = DVector::zeros(u);
                for p in 0..u {
                    xdir[p] = rng.gen_range(-1.0..1.0f64);
                }
                if xdir.norm() > 0.0 {
                    xdir = xdir.scale(rho / xdir.norm());
                    for p in 0..u {
                        zeta[p] += xdir[p];
                    }
                    for p in 0..s_dim {
                        zeta[u + p] += rng.gen_range(-1.0..1.0f64) * rho / (s_dim as f64).sqrt();
                    }
                    let fz = f_split(&zeta);
                    let mut val = -2.0 * spec.gamma * rho * rho;
                    for p in 0..u {
                        val += 2.0 * xdir[p] * (fz[p] - fp[p]);
                    }
                    match (&spec.delta, &delta_split) {
                        (DeltaModel::Zero, _) => {}
                        (DeltaModel::Envelope, _) => val -= 2.0 * rho * env,
                        (_, Some(ds)) => {
                            for p in 0..u {
                                val -= 2.0 * xdir[p] * ds[p];
                            }
                        }
                        _ => unreachable!(),
                    }
                    exit_min_t = exit_min_t.min(val);
                    samples_taken += 1;
                }
            }
            // entry face: y on the sphere, x in the ball
            if s_dim > 0 {
                let mut zeta = zetap.clone();
                let mut ydir = DVector::zeros(s_dim);
                for p in 0..s_dim {
                    ydir[p] = rng.gen_range(-1.0..1.0f64);
                }
                if ydir.norm() > 0.0 {
                    ydir = ydir.scale(rho / ydir.norm());
                    for p in 0..s_dim {
                        zeta[u + p] += ydir[p];
                    }
                    for p in 0..u {
                        zeta[p] += rng.gen_range(-1.0..1.0f64) * rho / (u.max(1) as f64).sqrt();
                    }
                    let fz = f_split(&zeta);
                    let mut val = -2.0 * spec.gamma * rho * rho;
                    for p in 0..s_dim {
                        val += 2.0 * ydir[p] * (fz[u + p] - fp[u + p]);
                    }
                    match (&spec.delta, &delta_split) {
                        (DeltaModel::Zero, _) => {}
                        (DeltaModel::Envelope, _) => val += 2.0 * rho * env,
                        (_, Some(ds)) => {
                            for p in 0..s_dim {
                                val -= 2.0 * ydir[p] * ds[u + p];
                            }
                        }
                        _ => unreachable!(),
                    }
                    entry_max_t = entry_max_t.max(val);
                    samples_taken += 1;
                }
            }
        }

        // sufficient closed-form margins at this slice
        let egt = (spec.gamma * t).exp();
        let suff_exit =
            2.0 * spec.radius * egt * (spec.radius * (cone.xi_arrow - spec.gamma) * egt - env);
        let suff_entry =
            -2.0 * spec.radius * egt * (spec.radius * (spec.gamma - cone.mu_arrow) * egt - env);
        margin_series.push((t, exit_min_t, entry_max_t));
        if t >= t_verified_from {
            if u > 0 {
                min_exit_verified = min_exit_verified.min(exit_min_t);
                suff_exit_min = suff_exit_min.min(suff_exit);
            }
            max_entry_verified = max_entry_verified.max(entry_max_t);
            suff_entry_max = suff_entry_max.max(suff_entry);
        }
    }

    let exit_ok = u == 0 || min_exit_verified > 0.0;
    let entry_ok = max_entry_verified < 0.0;
    Ok(SegmentReport {
        min_exit_margin: (u > 0).then_some(min_exit_verified),
        max_entry_margin: max_entry_verified,
        sufficient_exit_min: if u > 0 { suff_exit_min } else { f64::INFINITY },
        sufficient_entry_max: suff_entry_max,
        t_thresholds: (t_thr_exit, t_thr_entry),
        verified: exit_ok && entry_ok,
        sample_count: samples_taken,
        margin_series,
    })
}

// ---------------------------------------------------------------------------
// Shadowing distance.
// ---------------------------------------------------------------------------

/// Sup over tau of ||perturbed - reference|| e^{-gamma tau} plus the series,
/// over the overlap of the two sampled orbits (reference interpolated).
pub fn shadow_distance(
    perturbed: &[(f64, DVector<f64>)],
    reference: &[(f64, DVector<f64>)],
    gamma: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if perturbed.is_empty() || reference.is_empty() {
        return Err(Error::InsufficientWindow("empty orbit series".into()));
    }
    let lo = perturbed[0].0.max(reference[0].0);
    let hi = perturbed
        .last()
        .unwrap()
        .0
        .min(reference.last().unwrap().0);
    if hi <= lo {
        return Err(Error::InsufficientWindow(
            "orbit series do not overlap in tau".into(),
        ));
    }
    let mut series = Vec::new();
    let mut sup = 0.0f64;
    for (t, z) in perturbed {
        if *t < lo || *t > hi {
            continue;
        }
        let zr = interp_series(reference, *t);
        let d = (z - zr).norm();
        let ratio = d * (-gamma * t).exp();
        sup = sup.max(ratio);
        series.push((*t, d));
    }
    Ok((sup, series))
}
