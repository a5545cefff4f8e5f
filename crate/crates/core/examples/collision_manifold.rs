//! The autonomous blow-up field and its collision manifold r = 0: restpoints
//! sit above critical shapes at v = +/- sqrt(2 V), the manifold is exactly
//! invariant under the integrated flow, ejection and collision orbits are
//! time-reversal mirror images, and the two-body field reduces to the
//! collinear Kepler blow-up with a closed-form orbit.
//!
//! Run with: cargo run --example collision_manifold

use collapse_lab::blowup::{reversed_ejection_reference, AutonomousField};
use collapse_lab::cli::lagrange_restpoint_shape;
use collapse_lab::odeint::{integrate, IntegratorConfig};
use collapse_lab::vec2::Vec2;

fn main() {
    // restpoints above the equal-mass equilateral shape
    let field = AutonomousField::new(&[1.0, 1.0, 1.0]);
    let s_star = lagrange_restpoint_shape();
    let v_pot = field.ctx.v(&s_star).unwrap();
    println!("equal-mass triple, equilateral shape s* = (0, -2/sqrt(3)):");
    println!("  V(s*) = {v_pot:.12} (the normalized configuration's potential)");
    println!(
        "  restpoint velocities +/- sqrt(2V) = +/- {:.12}",
        (2.0 * v_pot).sqrt()
    );
    let y_rest = field.equilibrium(&s_star, false).unwrap();
    let mut dy = vec![0.0; field.dim()];
    field.eval(&y_rest, &mut dy).unwrap();
    println!(
        "  field magnitude at the collision restpoint: {:.3e}",
        dy.iter().map(|d| d.abs()).fold(0.0f64, f64::max)
    );

    // the collision manifold is invariant: r stays exactly zero
    let y0 = field.pack(0.0, 1.0, &[Vec2::new(0.3, -0.9)], &[Vec2::new(0.05, 0.1)]);
    let cfg = IntegratorConfig {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        dense: false,
        ..Default::default()
    };
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| field.eval(y, dy).unwrap();
    let (_, yf) = integrate(&mut rhs, 0.0, &y0, 4.0, &cfg, &mut []).unwrap();
    println!("\nflow on the collision manifold: r(0) = 0 -> r(4) = {:?}", yf[0]);

    // reversed ejection = collision orbit; for a pair the closed form is
    // r = C sech^2(b tau), v = -a tanh(b tau)
    let pair = AutonomousField::new(&[1.0, 1.0]);
    let v_pair = pair.ctx.v(&[]).unwrap();
    let a = (2.0 * v_pair).sqrt();
    let b = (v_pair / 2.0).sqrt();
    println!("\ntwo-body blow-up field (collinear Kepler):");
    println!("  V = {v_pair:.12}, collision restpoint v* = -{a:.12}");
    let samples = reversed_ejection_reference(&pair, &[], 1e-9, 0.4, &cfg).unwrap();
    println!("  reversed ejection orbit ({} samples):", samples.len());
    println!("  {:>8} {:>13} {:>13} {:>13}", "tau", "r", "v", "v closed form");
    let (tau_a, y_a) = samples
        .iter()
        .min_by(|x, y| {
            ((x.1[1] + a / 2.0).abs())
                .partial_cmp(&(y.1[1] + a / 2.0).abs())
                .unwrap()
        })
        .unwrap();
    let tau_c = tau_a - (-y_a[1] / a).atanh() / b;
    for (tau, y) in samples.iter().step_by(samples.len() / 8) {
        let v_exact = -a * (b * (tau - tau_c)).tanh();
        println!("  {:>8.3} {:>13.6e} {:>13.9} {:>13.9}", tau, y[0], y[1], v_exact);
    }
}
