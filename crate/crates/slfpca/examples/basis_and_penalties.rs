//! B-spline basis construction and the penalty building blocks: evaluates
//! the basis and its derivatives, prints the Gram matrices the estimator
//! uses, and traces the SCAD penalty across its three branches.

use nalgebra::DVector;
use slfpca::bspline::BSplineBasis;
use slfpca::penalty::{fscad_penalty_value, lqa_weight_matrix, scad, scad_deriv};

fn main() -> slfpca::Result<()> {
    let basis = BSplineBasis::new(10.0, 9, 3)?;
    println!(
        "basis: T = {}, K = {}, d = {}, L = {}",
        basis.domain_end(),
        basis.interior_knot_count(),
        basis.degree(),
        basis.num_basis()
    );

    let t = 2.37;
    let values = basis.eval(t, 0)?;
    println!(
        "partition of unity at t = {t}: sum = {:.15}",
        values.iter().sum::<f64>()
    );
    let curvature = basis.eval(t, 2)?;
    println!(
        "non-zero second-derivative entries at t = {t}: {}",
        curvature.iter().filter(|v| **v != 0.0).count()
    );

    let grams = basis.grams();
    println!(
        "mass matrix G0: {}x{}, diagonal range [{:.4}, {:.4}]",
        grams.mass.nrows(),
        grams.mass.ncols(),
        grams.mass.diagonal().min(),
        grams.mass.diagonal().max()
    );
    println!(
        "roughness matrix V: diagonal range [{:.3}, {:.3}]",
        grams.roughness.diagonal().min(),
        grams.roughness.diagonal().max()
    );

    let (lambda, a) = (0.5, 3.7);
    println!("scad branches at lambda = {lambda}, a = {a}:");
    for v in [0.0, 0.25, 0.5, 1.0, 1.85, 3.0] {
        println!(
            "  p({v:<4}) = {:.4}   p'({v:<4}) = {:.4}",
            scad(v, lambda, a)?,
            scad_deriv(v, lambda, a)?
        );
    }

    // A single normalized bump: the fSCAD value scores its per-segment
    // magnitudes, and the LQA weight matrix majorizes it around the bump.
    let mut theta = DVector::zeros(basis.num_basis());
    theta[3] = 1.0 / grams.mass[(3, 3)].sqrt();
    let value = fscad_penalty_value(&theta, 0.1, a, &grams)?;
    let weight = lqa_weight_matrix(&theta, 0.1, a, &grams)?;
    println!("fSCAD value of a normalized bump at lambda = 0.1: {value:.5}");
    println!(
        "LQA weight matrix: {} non-zero entries, quadratic form {:.5}",
        weight.iter().filter(|v| **v != 0.0).count(),
        0.5 * (&weight * &theta).dot(&theta)
    );
    Ok(())
}
