//! Score-estimation consistency: with the mean and eigenfunctions held at
//! the truth, the median absolute score error should fall as the per-subject
//! observation grid grows.

use slfpca::simulation::score_error_trend;

fn main() -> slfpca::Result<()> {
    let grid_sizes = [25, 51, 101, 201];
    let trend = score_error_trend(60, &grid_sizes, 5, 9)?;
    println!("grid size  median |score error|");
    for (grid, median) in &trend {
        println!("{grid:>9}  {median:.4}");
    }
    Ok(())
}
