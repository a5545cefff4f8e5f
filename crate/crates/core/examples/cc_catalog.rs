//! Central-configuration catalogs by multistart Newton iteration on the
//! shape potential's critical points: the classical equal-mass triples
//! (equilateral and collinear), the four-body square, and an unequal-mass
//! example.
//!
//! Run with: cargo run --example cc_catalog

use collapse_lab::cc::{cc_distance, enumerate_cc, CcSolveOptions};
use collapse_lab::shape::ShapeContext;

fn print_catalog(masses: &[f64], multistart: usize, dedup_labels: bool) {
    let opts = CcSolveOptions::default();
    let catalog = enumerate_cc(masses, multistart, 42, dedup_labels, &opts);
    println!(
        "masses {masses:?}  ({} classes{}):",
        catalog.len(),
        if dedup_labels {
            ", equal-mass labels merged"
        } else {
            ""
        }
    );
    println!(
        "  {:>14} {:>12} {:>11} {:>9} {:>7}",
        "lambda", "residual", "degenerate", "isolated", "chart"
    );
    for cc in &catalog {
        println!(
            "  {:>14.9} {:>12.2e} {:>11} {:>9} {:>7}",
            cc.lambda,
            cc.residual,
            cc.degenerate,
            cc.isolated,
            format!("{:?}", cc.chart_order)
        );
    }
}

fn main() {
    // 3 equal masses: 5 labeled classes, 2 after merging equal-mass labels
    print_catalog(&[1.0, 1.0, 1.0], 200, false);
    print_catalog(&[1.0, 1.0, 1.0], 200, true);
    // lambda = 3 is the unit-side equilateral, 5 sqrt(2)/2 the collinear row
    println!(
        "  closed forms: equilateral lambda = 3, collinear lambda = {:.9}\n",
        5.0 * 2f64.sqrt() / 2.0
    );

    // 4 equal masses: the square shows up at lambda = 4 sqrt(2) + 2
    print_catalog(&[1.0, 1.0, 1.0, 1.0], 500, true);
    println!(
        "  square closed form: lambda = {:.9}\n",
        4.0 * 2f64.sqrt() + 2.0
    );

    // unequal masses
    print_catalog(&[1.0, 2.0, 0.5], 200, true);

    // chart distance from a probe shape to the equal-mass catalog
    let opts = CcSolveOptions::default();
    let catalog = enumerate_cc(&[1.0, 1.0, 1.0], 200, 42, false, &opts);
    let ctx = ShapeContext::new(&[1.0, 1.0, 1.0]);
    let probe = vec![collapse_lab::vec2::Vec2::new(0.1, -1.0)];
    println!(
        "\ndistance of the probe shape s = (0.1 - 1.0i) to the CC set: {:.6}",
        cc_distance(&ctx, &probe, &catalog)
    );
}
