//! Full fit at fixed tuning parameters: simulate locally sparse data,
//! initialize, run the MM solver, and compare the estimates to the truth.

use slfpca::bspline::BSplineBasis;
use slfpca::init::init_from_naive_fpca;
use slfpca::penalty::PenaltyConfig;
use slfpca::simulation::{generate, ise, match_components, support_metrics, true_mean, Design, SimScenario};
use slfpca::solver::{fit, FitConfig};

fn main() -> slfpca::Result<()> {
    let scenario = SimScenario::new(1, 200, Design::Dense, 7)?;
    let (data, truth) = generate(&scenario)?;
    let basis = BSplineBasis::new(10.0, 9, 3)?;

    let config = FitConfig {
        num_fpcs: 2,
        penalties: PenaltyConfig {
            kappa_mu: 1e-4,
            kappa_theta: 1e-2,
            lambda: 0.3,
            scad_a: 3.7,
        },
        seed: 7,
        ..FitConfig::default()
    };
    let (init, diag) = init_from_naive_fpca(&data, &basis, config.num_fpcs, config.seed)?;
    println!("initializer eigenvalues: {:?}", diag.grid_eigenvalues);

    let (model, report) = fit(&data, &basis, &config, &init)?;
    println!(
        "fit finished after {} outer iterations (converged: {})",
        report.outer_iterations, report.converged
    );
    println!("penalized negative log-likelihood: {:.2}", report.penalized_nll);
    println!("degrees of freedom: {:?}", report.df);

    println!("ise_mu = {:.4}", ise(model.mean_fn(), true_mean, 10.0, false));
    let matched = match_components(&model, &truth.fpcs);
    for (j, &k) in matched.iter().enumerate() {
        let err = ise(model.fpc_fn(k), truth.fpcs.fn_handle(j), 10.0, true);
        let (zero_acc, nonzero_acc) =
            support_metrics(model.fpc_fn(k), truth.fpcs.fn_handle(j), 10.0, 201)?;
        println!(
            "phi_{}: ise = {err:.4}, zero-region accuracy = {zero_acc:.3}, non-zero-region accuracy = {nonzero_acc:.3}",
            j + 1
        );
        let coefs = model.fpc_coef.row(k);
        let active: Vec<usize> = (0..coefs.len()).filter(|&l| coefs[l] != 0.0).collect();
        println!("  active coefficients: {active:?}");
    }
    Ok(())
}
