//! Central configurations of a cluster: Newton solver on the shape
//! potential's critical points, multistart enumeration, and catalog
//! distances.
//!
//! In the chart, normalized central configurations are exactly the critical
//! points of V(s); the normalized representative (moment of inertia 1) has
//! multiplier lambda = U = V(s*).

use crate::error::{Error, Result};
use crate::shape::ShapeContext;
use crate::vec2::Vec2;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A solved central configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcResult {
    /// Chart coordinates in the chart defined by `chart_order`.
    pub s_star: Vec<Vec2>,
    /// Member ordering of the Jacobi chart the solve ran in. Configurations
    /// sitting on the boundary of one chart (last Jacobi coordinate zero)
    /// are reachable in a rotated order.
    pub chart_order: Vec<usize>,
    pub lambda: f64,
    /// ||grad V(s*)|| at the solution.
    pub residual: f64,
    /// Eigenvalues of the V-Hessian at s*, ascending.
    pub hessian_spectrum: Vec<f64>,
    pub degenerate: bool,
    /// Numerical isolation heuristic (nondegenerate, or a shell search finds
    /// no other critical point nearby). Not a proof of isolation.
    pub isolated: bool,
    /// Cluster configuration with c_G = 0 and moment of inertia 1, in the
    /// original label order.
    pub normalized_q: Vec<Vec2>,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CcSolveOptions {
    pub max_iters: usize,
    /// Convergence: ||grad V|| < tol_factor * V(s).
    pub tol_factor: f64,
    /// Relative Hessian-eigenvalue threshold for the degenerate flag.
    pub degeneracy_tol: f64,
    /// Chart-metric radius under which two solutions are the same CC.
    pub dedup_tol: f64,
    /// Pairwise distance (normalized configuration) treated as a collapse to
    /// a singular shape.
    pub singular_shape_tol: f64,
}

impl Default for CcSolveOptions {
    fn default() -> Self {
        CcSolveOptions {
            max_iters: 200,
            tol_factor: 1e-12,
            degeneracy_tol: 1e-8,
            dedup_tol: 1e-6,
            singular_shape_tol: 1e-6,
        }
    }
}

fn min_pair_distance(q: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..q.len() {
        for j in (i + 1)..q.len() {
            best = best.min((q[i] - q[j]).norm());
        }
    }
    best
}

/// Normalized representative of a shape: c_G = 0, I = 1, theta = 0.
pub fn normalized_configuration(ctx: &ShapeContext, s: &[Vec2]) -> Vec<Vec2> {
    ctx.positions_from_chart(1.0, 0.0, s, Vec2::ZERO)
}

/// Damped Newton iteration on grad V(s) = 0 with Armijo backtracking on the
/// squared residual and a Tikhonov fallback when the Hessian is
/// near-singular.
pub fn solve_cc(ctx: &ShapeContext, s0: &[Vec2], opts: &CcSolveOptions) -> Result<CcResult> {
    solve_cc_inner(ctx, s0, opts, true)
}

fn solve_cc_inner(
    ctx: &ShapeContext,
    s0: &[Vec2],
    opts: &CcSolveOptions,
    probe_isolation: bool,
) -> Result<CcResult> {
    let d = ctx.sdim();
    if d == 0 {
        // a pair has a single (trivial) shape
        let q = normalized_configuration(ctx, &[]);
        let lambda = ctx.v(&[])?;
        return Ok(CcResult {
            s_star: Vec::new(),
            chart_order: (0..ctx.k()).collect(),
            lambda,
            residual: 0.0,
            hessian_spectrum: Vec::new(),
            degenerate: false,
            isolated: true,
            normalized_q: q,
            newton_iterations: 0,
        });
    }
    let mut s = s0.to_vec();
    let mut iters = 0usize;
    loop {
        let q = normalized_configuration(ctx, &s);
        if min_pair_distance(&q) < opts.singular_shape_tol {
            return Err(Error::NoConvergence(format!(
                "converged toward a singular shape (min normalized distance {:.3e})",
                min_pair_distance(&q)
            )));
        }
        if ctx.shape_to_vector(&s).amax() > 1e6 {
            return Err(Error::ChartViolation(0.0));
        }
        let grad = ctx.grad_v(&s)?;
        let v_val = ctx.v(&s)?;
        let res = grad.norm();
        if res < opts.tol_factor * v_val {
            return finish(ctx, s, res, iters, opts, probe_isolation);
        }
        if iters >= opts.max_iters {
            return Err(Error::NoConvergence(format!(
                "Newton did not converge in {} iterations (residual {:.3e})",
                opts.max_iters, res
            )));
        }
        let hess = ctx.hessian_v(&s)?;
        let step = newton_direction(&hess, &grad)?;
        // Armijo backtracking on phi = ||grad V||^2 / 2
        let phi0 = 0.5 * res * res;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = apply_step(ctx, &s, &step, alpha);
            if let Ok(g_trial) = ctx.grad_v(&trial) {
                let phi = 0.5 * g_trial.norm_squared();
                if phi < phi0 * (1.0 - 1e-4 * alpha) || phi < phi0 * 1e-8 {
                    s = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence(
                "line search stalled on the CC residual".into(),
            ));
        }
        iters += 1;
    }
}

fn apply_step(ctx: &ShapeContext, s: &[Vec2], step: &DVector<f64>, alpha: f64) -> Vec<Vec2> {
    let mut sv = ctx.shape_to_vector(s);
    sv += step.scale(alpha);
    ctx.vector_to_shape(&sv)
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    // plain Newton first; Tikhonov-regularize when the factorization fails
    // or the step is absurdly long (near-degenerate Hessian)
    if let Some(d) = hess.clone().lu().solve(&(-grad)) {
        if d.norm().is_finite() && d.norm() < 1e6 * (1.0 + grad.norm()) {
            return Ok(d);
        }
    }
    let scale = hess.amax().max(1e-12);
    let mut lam = 1e-10 * scale;
    for _ in 0..60 {
        let reg = hess + DMatrix::identity(hess.nrows(), hess.ncols()).scale(lam);
        if let Some(dir) = reg.lu().solve(&(-grad)) {
            if dir.norm().is_finite() {
                return Ok(dir);
            }
        }
        lam *= 10.0;
    }
    Err(Error::NoConvergence(
        "Hessian regularization failed".into(),
    ))
}

fn finish(
    ctx: &ShapeContext,
    s: Vec<Vec2>,
    residual: f64,
    iters: usize,
    opts: &CcSolveOptions,
    probe_isolation: bool,
) -> Result<CcResult> {
    // A critical point escaping toward the chart boundary (|s| large) is the
    // image of a CC whose last Jacobi coordinate vanishes; it belongs to a
    // rotated chart, so reject it here instead of reporting a bogus point.
    let margin = (ctx.nu[ctx.k() - 2] / ctx.norm_sq_s1(&s)).sqrt();
    if margin < 1e-3 {
        return Err(Error::ChartViolation(margin));
    }
    let hess = ctx.hessian_v(&s)?;
    let spectrum = {
        let eig = nalgebra::SymmetricEigen::new(hess);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals
    };
    let max_eig = spectrum.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let degenerate = spectrum
        .iter()
        .any(|&e| e.abs() < opts.degeneracy_tol * max_eig.max(1e-300));
    let normalized_q = normalized_configuration(ctx, &s);
    let lambda = ctx.v(&s)?;
    let isolated = !degenerate || (probe_isolation && shell_search_isolated(ctx, &s, opts));
    Ok(CcResult {
        s_star: s,
        chart_order: (0..ctx.k()).collect(),
        lambda,
        residual,
        hessian_spectrum: spectrum,
        degenerate,
        isolated,
        normalized_q,
        newton_iterations: iters,
    })
}

/// Dense shell search at radius 10 * dedup_tol: isolated when every re-solve
/// from the shell returns to the same point (or fails).
fn shell_search_isolated(ctx: &ShapeContext, s: &[Vec2], opts: &CcSolveOptions) -> bool {
    let d = ctx.sdim();
    let radius = 10.0 * opts.dedup_tol;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..16 {
        let mut dir = DVector::zeros(d);
        for p in 0..d {
            dir[p] = rng.gen_range(-1.0..1.0);
        }
        let n = dir.norm();
        if n == 0.0 {
            continue;
        }
        let seed = apply_step(ctx, s, &dir.scale(radius / n), 1.0);
        if let Ok(other) = solve_cc_inner(ctx, &seed, opts, false) {
            if ctx.shape_distance(s, &other.s_star) > opts.dedup_tol {
                return false;
            }
        }
    }
    true
}

/// Key for deterministic catalog ordering.
fn order_key(a: &CcResult, b: &CcResult) -> std::cmp::Ordering {
    a.lambda
        .partial_cmp(&b.lambda)
        .unwrap()
        .then_with(|| {
            let av: Vec<f64> = a.s_star.iter().flat_map(|p| [p.x, p.y]).collect();
            let bv: Vec<f64> = b.s_star.iter().flat_map(|p| [p.x, p.y]).collect();
            av.partial_cmp(&bv).unwrap()
        })
}

/// Rotation-quotient distance between two labeled configurations, through
/// the Fubini-Study metric on their relative coordinates. Chart-free, so it
/// also separates configurations on a chart boundary.
pub fn configuration_distance(ctx: &ShapeContext, qa: &[Vec2], qb: &[Vec2]) -> f64 {
    let fa = crate::jacobi::jacobi_forward(qa, &ctx.masses);
    let fb = crate::jacobi::jacobi_forward(qb, &ctx.masses);
    ctx.ray_distance(&fa.frak_z, &fb.frak_z)
}

/// Multistart enumeration of central configurations for one mass vector.
///
/// Seeds are solved in every cyclic rotation of the member order so that
/// configurations on one chart's boundary are still found; results are
/// dedup'd modulo rotation through the chart-free configuration distance.
/// When `dedup_labels` is set, configurations that agree after permuting
/// equal-mass bodies are also merged.
pub fn enumerate_cc(
    cluster_masses: &[f64],
    multistart: usize,
    seed: u64,
    dedup_labels: bool,
    opts: &CcSolveOptions,
) -> Vec<CcResult> {
    let k = cluster_masses.len();
    let ctx_base = ShapeContext::new(cluster_masses);
    let orders: Vec<Vec<usize>> = (0..k)
        .map(|shift| (0..k).map(|i| (i + shift) % k).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<CcResult> = Vec::new();
    let per_chart = multistart.div_ceil(orders.len());
    for order in &orders {
        let masses_perm: Vec<f64> = order.iter().map(|&i| cluster_masses[i]).collect();
        let ctx = ShapeContext::new(&masses_perm);
        let d = ctx.sdim();
        for trial in 0..per_chart {
            let mut s0 = Vec::with_capacity(d / 2);
            for _ in 0..d / 2 {
                // alternate between generic seeds and near-collinear seeds
                if trial % 4 == 3 {
                    s0.push(Vec2::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-0.05..0.05),
                    ));
                } else {
                    s0.push(Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)));
                }
            }
            let Ok(mut result) = solve_cc(&ctx, &s0, opts) else {
                continue;
            };
            // restore original body labels in the configuration
            let mut q_orig = vec![Vec2::ZERO; k];
            for (pos, &label) in order.iter().enumerate() {
                q_orig[label] = result.normalized_q[pos];
            }
            result.normalized_q = q_orig;
            result.chart_order = order.clone();
            let duplicate = found.iter().any(|known| {
                configuration_distance(&ctx_base, &known.normalized_q, &result.normalized_q)
                    < opts.dedup_tol
                    || (dedup_labels
                        && label_equivalent(&ctx_base, known, &result, opts.dedup_tol))
            });
            if !duplicate {
                found.push(result);
            }
        }
    }
    found.sort_by(order_key);
    found
}

/// True when two CCs coincide after permuting equal-mass bodies.
fn label_equivalent(ctx: &ShapeContext, a: &CcResult, b: &CcResult, tol: f64) -> bool {
    let masses = &ctx.masses;
    let k = masses.len();
    let perms = mass_preserving_permutations(masses);
    for perm in perms {
        let q_perm: Vec<Vec2> = (0..k).map(|i| b.normalized_q[perm[i]]).collect();
        if configuration_distance(ctx, &a.normalized_q, &q_perm) < tol {
            return true;
        }
    }
    false
}

fn mass_preserving_permutations(masses: &[f64]) -> Vec<Vec<usize>> {
    let k = masses.len();
    let mut all = vec![vec![]];
    let indices: Vec<usize> = (0..k).collect();
    permute(&indices, &mut vec![], &mut all);
    all.retain(|p| p.len() == k && (0..k).all(|i| masses[p[i]] == masses[i]));
    all
}

fn permute(rest: &[usize], acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if rest.is_empty() {
        out.push(acc.clone());
        return;
    }
    for (i, &x) in rest.iter().enumerate() {
        let mut r = rest.to_vec();
        r.remove(i);
        acc.push(x);
        permute(&r, acc, out);
        acc.pop();
    }
}

/// Fubini-Study distance from a shape (given in the default chart) to the
/// nearest catalog entry.
pub fn cc_distance(ctx: &ShapeContext, s: &[Vec2], catalog: &[CcResult]) -> f64 {
    let z = ctx.s_to_z(s);
    catalog
        .iter()
        .map(|cc| {
            let f = crate::jacobi::jacobi_forward(&cc.normalized_q, &ctx.masses);
            ctx.ray_distance(&z, &f.frak_z)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Serializable catalog with the masses it belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcCatalog {
    pub masses: Vec<f64>,
    pub entries: Vec<CcResult>,
}

impl CcCatalog {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx3() -> ShapeContext {
        ShapeContext::new(&[1.0, 1.0, 1.0])
    }

    #[test]
    fn lagrange_cc_from_nearby_seed() {
        let ctx = ctx3();
        let s0 = vec![Vec2::new(0.1, -1.05)];
        let cc = solve_cc(&ctx, &s0, &CcSolveOptions::default()).unwrap();
        assert!((cc.lambda - 3.0).abs() < 1e-10, "lambda {}", cc.lambda);
        assert!(cc.residual < 1e-12 * cc.lambda);
        // normalized equilateral has unit side for unit masses
        for i in 0..3 {
            for j in (i + 1)..3 {
                let d = (cc.normalized_q[i] - cc.normalized_q[j]).norm();
                assert!((d - 1.0).abs() < 1e-10, "side {d}");
            }
        }
        // CC condition componentwise: grad_i U + lambda m_i q_i = 0
        for (i, q) in cc.normalized_q.iter().enumerate() {
            let mut grad = Vec2::ZERO;
            for (j, p) in cc.normalized_q.iter().enumerate() {
                if i != j {
                    let d = (*p - *q).norm();
                    grad += (*p - *q) * (1.0 / (d * d * d));
                }
            }
            let cond = (grad + *q * cc.lambda).norm();
            assert!(cond < 1e-9, "CC condition residual {cond}");
        }
    }

    #[test]
    fn euler_cc_from_collinear_seed() {
        let ctx = ctx3();
        let s0 = vec![Vec2::new(0.6, 0.01)];
        let cc = solve_cc(&ctx, &s0, &CcSolveOptions::default()).unwrap();
        let expected = 5.0 * 2f64.sqrt() / 2.0;
        assert!(
            (cc.lambda - expected).abs() < 1e-10,
            "lambda {} vs {}",
            cc.lambda,
            expected
        );
    }

    #[test]
    fn exact_seed_needs_no_iterations() {
        let ctx = ctx3();
        let s0 = vec![Vec2::new(0.0, -2.0 / 3f64.sqrt())];
        let cc = solve_cc(&ctx, &s0, &CcSolveOptions::default()).unwrap();
        assert_eq!(cc.newton_iterations, 0);
        assert!((ctx.shape_distance(&cc.s_star, &s0)) < 1e-14);
    }

    #[test]
    fn three_equal_masses_catalog() {
        let opts = CcSolveOptions::default();
        let all = enumerate_cc(&[1.0, 1.0, 1.0], 160, 7, false, &opts);
        // 2 equilateral orientations + 3 collinear orderings
        assert_eq!(all.len(), 5, "classes before label reduction");
        let reduced = enumerate_cc(&[1.0, 1.0, 1.0], 160, 7, true, &opts);
        assert_eq!(reduced.len(), 2, "classes after label reduction");
        for cc in &all {
            assert!(cc.lambda > 0.0);
            // scale consistency: U = lambda at I = 1
            let u: f64 = {
                let q = &cc.normalized_q;
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in (i + 1)..3 {
                        acc += 1.0 / (q[i] - q[j]).norm();
                    }
                }
                acc
            };
            assert!((u - cc.lambda).abs() < 1e-10);
            assert!(!cc.degenerate, "equal-mass triple CCs are nondegenerate");
        }
    }

    #[test]
    fn four_equal_masses_include_square() {
        let opts = CcSolveOptions::default();
        let catalog = enumerate_cc(&[1.0, 1.0, 1.0, 1.0], 400, 11, true, &opts);
        assert!(!catalog.is_empty());
        // the square: I = 1 forces side 1/sqrt(2); lambda = U = 4 sqrt(2) + 2
        let lambda_square = 4.0 * 2f64.sqrt() + 2.0;
        let square = catalog
            .iter()
            .find(|cc| (cc.lambda - lambda_square).abs() < 1e-8);
        assert!(
            square.is_some(),
            "square CC missing; lambdas: {:?}",
            catalog.iter().map(|c| c.lambda).collect::<Vec<_>>()
        );
        assert!(square.unwrap().residual < 1e-10);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let opts = CcSolveOptions::default();
        let a = enumerate_cc(&[1.0, 1.0, 1.0], 80, 3, true, &opts);
        let b = enumerate_cc(&[1.0, 1.0, 1.0], 80, 3, true, &opts);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
        }
    }

    #[test]
    fn catalog_distance_zero_at_entries() {
        let ctx = ctx3();
        let opts = CcSolveOptions::default();
        let catalog = enumerate_cc(&[1.0, 1.0, 1.0], 80, 3, false, &opts);
        assert!(!catalog.is_empty());
        for cc in &catalog {
            let f = crate::jacobi::jacobi_forward(&cc.normalized_q, &ctx.masses);
            let d = catalog
                .iter()
                .map(|other| {
                    let g = crate::jacobi::jacobi_forward(&other.normalized_q, &ctx.masses);
                    ctx.ray_distance(&f.frak_z, &g.frak_z)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn degeneracy_flag_stable_under_tolerance_change() {
        let ctx = ctx3();
        let mut opts = CcSolveOptions::default();
        let s0 = vec![Vec2::new(0.1, -1.05)];
        let cc1 = solve_cc(&ctx, &s0, &opts).unwrap();
        opts.degeneracy_tol *= 10.0;
        let cc2 = solve_cc(&ctx, &s0, &opts).unwrap();
        assert_eq!(cc1.degenerate, cc2.degenerate);
    }
}
