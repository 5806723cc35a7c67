//! GCV/BIC tuning-parameter selection over a candidate grid, printing the
//! full table and the selected pair.

use slfpca::bspline::BSplineBasis;
use slfpca::simulation::{generate, Design, SimScenario};
use slfpca::solver::FitConfig;
use slfpca::tuning::{select_tuning, TuningGrid};

fn main() -> slfpca::Result<()> {
    let scenario = SimScenario::new(1, 120, Design::Dense, 11)?;
    let (data, _) = generate(&scenario)?;
    let basis = BSplineBasis::new(10.0, 9, 3)?;
    let config = FitConfig {
        seed: 11,
        ..FitConfig::default()
    };
    let grid = TuningGrid {
        kappa_mu: slfpca::tuning::default_kappa_grid(),
        kappa_theta: vec![1e-3, 1e-2],
        lambda: vec![0.0, 0.1, 0.3],
    };

    let result = select_tuning(&data, &basis, &grid, &config)?;
    println!("kappa_theta  lambda   bic        df_total  converged");
    for cell in &result.table {
        println!(
            "{:<12} {:<8} {:<10.1} {:<9.2} {}",
            cell.kappa_theta, cell.lambda, cell.bic, cell.df_total, cell.converged
        );
    }
    println!(
        "\nselected: kappa_mu = {}, kappa_theta = {}, lambda = {}",
        result.best.kappa_mu, result.best.kappa_theta, result.best.lambda
    );
    Ok(())
}
