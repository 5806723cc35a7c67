//! Draws binary functional data from the benchmark latent model and writes
//! the dataset CSV plus the ground-truth JSON.

use slfpca::simulation::{generate, Design, SimScenario};

fn main() -> slfpca::Result<()> {
    let mut scenario = SimScenario::new(2, 100, Design::Sparse, 42)?;
    scenario.eigenvalues = (9.0, 4.0);
    let (data, truth) = generate(&scenario)?;

    println!(
        "case {} ({:?} design): n = {}, N = {}",
        scenario.case,
        scenario.design,
        data.num_subjects(),
        data.total_count()
    );
    let first = &data.subjects()[0];
    println!(
        "subject {}: m = {}, first times {:.3?}",
        first.id,
        first.times.len(),
        &first.times[..3.min(first.times.len())]
    );
    let positives: usize = data
        .subjects()
        .iter()
        .flat_map(|s| s.outcomes.iter())
        .map(|&y| y as usize)
        .sum();
    println!(
        "outcome balance: {:.1}% ones",
        100.0 * positives as f64 / data.total_count() as f64
    );
    println!(
        "true score sd: {:.2} / {:.2}",
        truth.scores.column(0).iter().map(|v| v * v).sum::<f64>().sqrt()
            / (truth.scores.nrows() as f64).sqrt(),
        truth.scores.column(1).iter().map(|v| v * v).sum::<f64>().sqrt()
            / (truth.scores.nrows() as f64).sqrt()
    );

    let dir = std::env::temp_dir();
    let data_path = dir.join("slfpca_example_data.csv");
    let truth_path = dir.join("slfpca_example_truth.json");
    data.write_csv(&data_path)?;
    truth.save_json(&truth_path, 501)?;
    println!("wrote {} and {}", data_path.display(), truth_path.display());
    Ok(())
}
