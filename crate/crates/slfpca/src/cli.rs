//! Command-line front end: `simulate`, `fit`, `tune`, `mc`, and `metrics`
//! subcommands over the library pipeline.
//!
//! Every subcommand is deterministic given its flags (seeds included). A
//! JSON config file may supply any long-flag value via `--config`; explicit
//! flags take precedence. Exit codes: 0 success, 2 usage error, 3 data
//! error, 4 numerical failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::bspline::BSplineBasis;
use crate::dataset::BinaryFunctionalDataset;
use crate::error::{Error, Result};
use crate::init::init_from_naive_fpca;
use crate::penalty::PenaltyConfig;
use crate::simulation::{
    self, generate, ise, match_components, support_metrics, Design, SimScenario, Truth,
};
use crate::solver::{self, FitConfig, SlfpcaModel};
use crate::tuning::{self, select_tuning, TuningGrid};

#[derive(Parser)]
#[command(
    name = "slfpca",
    version,
    about = "Sparse logistic functional principal component analysis for binary functional data"
)]
pub struct Cli {
    /// JSON file supplying default flag values (explicit flags win).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a benchmark dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Fit the model at fixed tuning parameters.
    Fit(FitArgs),
    /// Select tuning parameters by GCV/BIC, then refit at the best pair.
    Tune(TuneArgs),
    /// Monte Carlo study: generate, tune, fit, and score repeatedly.
    Mc(McArgs),
    /// Score a fitted model against a stored ground truth.
    Metrics(MetricsArgs),
}

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// Benchmark case, 1-4.
    #[arg(long)]
    pub case: Option<u8>,
    /// Number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    /// Observation design: dense or sparse.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset CSV.
    #[arg(long)]
    pub out_data: Option<PathBuf>,
    /// Output ground-truth JSON.
    #[arg(long)]
    pub out_truth: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct FitArgs {
    /// Input dataset CSV (`subject,time,y`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Domain end of the basis.
    #[arg(long = "T")]
    pub domain_end: Option<f64>,
    /// Number of interior knots.
    #[arg(long = "K")]
    pub interior_knots: Option<usize>,
    /// Spline degree.
    #[arg(long = "d")]
    pub degree: Option<usize>,
    /// Number of components.
    #[arg(long = "p")]
    pub num_fpcs: Option<usize>,
    #[arg(long)]
    pub kappa_mu: Option<f64>,
    #[arg(long)]
    pub kappa_theta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output model JSON.
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    /// Output grid CSV of the fitted functions.
    #[arg(long)]
    pub out_grid: Option<PathBuf>,
    /// Points of the output grid.
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(clap::Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "T")]
    pub domain_end: Option<f64>,
    #[arg(long = "K")]
    pub interior_knots: Option<usize>,
    #[arg(long = "d")]
    pub degree: Option<usize>,
    #[arg(long = "p")]
    pub num_fpcs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated kappa_mu candidates.
    #[arg(long, value_delimiter = ',')]
    pub kappa_mu_grid: Option<Vec<f64>>,
    /// Comma-separated kappa_theta candidates.
    #[arg(long, value_delimiter = ',')]
    pub kappa_theta_grid: Option<Vec<f64>>,
    /// Comma-separated lambda candidates (must include 0).
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// JSON file with the candidate grids.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    /// Output BIC table CSV.
    #[arg(long)]
    pub out_table: Option<PathBuf>,
    /// Output best-configuration JSON.
    #[arg(long)]
    pub out_best: Option<PathBuf>,
    /// Output model JSON of the refit at the best pair.
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    #[arg(long)]
    pub out_grid: Option<PathBuf>,
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(clap::Args)]
pub struct McArgs {
    #[arg(long)]
    pub case: Option<u8>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "p")]
    pub num_fpcs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub kappa_mu_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub kappa_theta_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Grid size of the support-recovery metrics.
    #[arg(long)]
    pub support_grid: Option<usize>,
    /// Output per-run CSV.
    #[arg(long)]
    pub out_runs: Option<PathBuf>,
    /// Output mean/sd summary CSV.
    #[arg(long)]
    pub out_summary: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct MetricsArgs {
    /// Fitted model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ground-truth JSON from `simulate`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Grid size of the support-recovery metrics.
    #[arg(long)]
    pub grid_size: Option<usize>,
}

/// Flat config-file schema; keys match the long flag names.
#[derive(Default, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
struct ConfigFile {
    case: Option<u8>,
    n: Option<usize>,
    design: Option<String>,
    seed: Option<u64>,
    #[serde(rename = "T")]
    domain_end: Option<f64>,
    #[serde(rename = "K")]
    interior_knots: Option<usize>,
    #[serde(rename = "d")]
    degree: Option<usize>,
    p: Option<usize>,
    kappa_mu: Option<f64>,
    kappa_theta: Option<f64>,
    lambda: Option<f64>,
    runs: Option<usize>,
    grid_points: Option<usize>,
    grid_size: Option<usize>,
    support_grid: Option<usize>,
    kappa_mu_grid: Option<Vec<f64>>,
    kappa_theta_grid: Option<Vec<f64>>,
    lambda_grid: Option<Vec<f64>>,
}

fn pick<T: Clone>(flag: &Option<T>, config: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| config.clone()).unwrap_or(default)
}

fn pick_required<T: Clone>(flag: &Option<T>, config: &Option<T>, name: &str) -> Result<T> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| Error::invalid(format!("missing required flag --{name}")))
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => 2,
        Error::Singular(_) => 4,
        _ => 3,
    }
}

/// Parses the process arguments, runs the subcommand, and returns the exit
/// code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        None => ConfigFile::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("bad config file {}: {e}", path.display())))?
        }
    };
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args, &config),
        Command::Fit(args) => cmd_fit(args, &config),
        Command::Tune(args) => cmd_tune(args, &config),
        Command::Mc(args) => cmd_mc(args, &config),
        Command::Metrics(args) => cmd_metrics(args, &config),
    }
}

fn parse_design(text: &str) -> Result<Design> {
    text.parse()
}

fn scenario_from(
    case: u8,
    n: usize,
    design: &str,
    seed: u64,
) -> Result<SimScenario> {
    SimScenario::new(case, n, parse_design(design)?, seed)
}

fn cmd_simulate(args: &SimulateArgs, config: &ConfigFile) -> Result<()> {
    let case = pick(&args.case, &config.case, 1);
    let n = pick(&args.n, &config.n, 200);
    let design = pick(&args.design, &config.design, "dense".to_string());
    let seed = pick(&args.seed, &config.seed, 1);
    let out_data = pick_required(&args.out_data, &None, "out-data")?;
    let out_truth = pick_required(&args.out_truth, &None, "out-truth")?;

    let scenario = scenario_from(case, n, &design, seed)?;
    let (data, truth) = generate(&scenario)?;
    data.write_csv(&out_data)?;
    truth.save_json(&out_truth, 501)?;
    println!(
        "simulate: case {case}, {design} design, n = {n}, N = {}, seed = {seed}",
        data.total_count()
    );
    println!("wrote {} and {}", out_data.display(), out_truth.display());
    Ok(())
}

fn fit_config_from(num_fpcs: usize, penalties: PenaltyConfig, seed: u64) -> FitConfig {
    FitConfig {
        num_fpcs,
        penalties,
        seed,
        ..FitConfig::default()
    }
}

fn print_fit_report(config: &FitConfig, report: &solver::FitReport) {
    if config.penalties.lambda > 0.0 {
        println!("sparseness: on (lambda = {})", config.penalties.lambda);
    } else {
        println!("sparseness: off");
    }
    if report.converged {
        println!("converged: yes ({} outer iterations)", report.outer_iterations);
    } else {
        println!(
            "converged: no (stopped after {} outer iterations)",
            report.outer_iterations
        );
    }
    println!("penalized negative log-likelihood: {}", report.penalized_nll);
    let df: Vec<String> = report.df.iter().map(|d| format!("{d:.3}")).collect();
    println!("degrees of freedom per component: [{}]", df.join(", "));
}

fn cmd_fit(args: &FitArgs, config: &ConfigFile) -> Result<()> {
    let data_path = pick_required(&args.data, &None, "data")?;
    let domain_end = pick(&args.domain_end, &config.domain_end, 10.0);
    let interior_knots = pick(&args.interior_knots, &config.interior_knots, 9);
    let degree = pick(&args.degree, &config.degree, 3);
    let num_fpcs = pick(&args.num_fpcs, &config.p, 2);
    if num_fpcs == 0 {
        return Err(Error::invalid("--p must be at least 1".to_string()));
    }
    let penalties = PenaltyConfig {
        kappa_mu: pick(&args.kappa_mu, &config.kappa_mu, 1e-3),
        kappa_theta: pick(&args.kappa_theta, &config.kappa_theta, 1e-3),
        lambda: pick(&args.lambda, &config.lambda, 0.0),
        scad_a: 3.7,
    };
    let seed = pick(&args.seed, &config.seed, 1);
    let out_model = pick_required(&args.out_model, &None, "out-model")?;
    let grid_points = pick(&args.grid_points, &config.grid_points, 501);

    let data = BinaryFunctionalDataset::load_csv(&data_path, domain_end)?;
    let basis = BSplineBasis::new(domain_end, interior_knots, degree)?;
    let fit_config = fit_config_from(num_fpcs, penalties, seed);
    fit_config.validate()?;
    let (init, _) = init_from_naive_fpca(&data, &basis, num_fpcs, seed)?;
    let (model, report) = solver::fit(&data, &basis, &fit_config, &init)?;

    println!(
        "fit: n = {}, N = {}, basis L = {} (T = {domain_end}, K = {interior_knots}, d = {degree}), p = {num_fpcs}",
        data.num_subjects(),
        data.total_count(),
        basis.num_basis()
    );
    print_fit_report(&fit_config, &report);
    model.save_json(&out_model, Some(&fit_config), Some(&report))?;
    println!("wrote {}", out_model.display());
    if let Some(out_grid) = &args.out_grid {
        model.write_grid_csv(out_grid, grid_points)?;
        println!("wrote {}", out_grid.display());
    }
    Ok(())
}

/// Deduplicates a candidate list in place, preserving order; returns how
/// many entries were removed.
fn dedup_candidates(values: &mut Vec<f64>) -> usize {
    let mut seen: Vec<f64> = Vec::new();
    let before = values.len();
    values.retain(|v| {
        if seen.iter().any(|s| s == v) {
            false
        } else {
            seen.push(*v);
            true
        }
    });
    before - values.len()
}

fn resolve_grid(
    kappa_mu: &Option<Vec<f64>>,
    kappa_theta: &Option<Vec<f64>>,
    lambda: &Option<Vec<f64>>,
    grid_file: &Option<PathBuf>,
    config: &ConfigFile,
) -> Result<TuningGrid> {
    let from_file: Option<TuningGrid> = match grid_file {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Some(serde_json::from_str(&text).map_err(|e| {
                Error::invalid(format!("bad grid file {}: {e}", path.display()))
            })?)
        }
    };
    let defaults = TuningGrid::default();
    let mut grid = TuningGrid {
        kappa_mu: kappa_mu
            .clone()
            .or_else(|| config.kappa_mu_grid.clone())
            .or_else(|| from_file.as_ref().map(|g| g.kappa_mu.clone()))
            .unwrap_or(defaults.kappa_mu),
        kappa_theta: kappa_theta
            .clone()
            .or_else(|| config.kappa_theta_grid.clone())
            .or_else(|| from_file.as_ref().map(|g| g.kappa_theta.clone()))
            .unwrap_or(defaults.kappa_theta),
        lambda: lambda
            .clone()
            .or_else(|| config.lambda_grid.clone())
            .or_else(|| from_file.as_ref().map(|g| g.lambda.clone()))
            .unwrap_or(defaults.lambda),
    };
    let removed = dedup_candidates(&mut grid.kappa_mu)
        + dedup_candidates(&mut grid.kappa_theta)
        + dedup_candidates(&mut grid.lambda);
    if removed > 0 {
        eprintln!("warning: removed {removed} duplicate tuning candidates");
    }
    grid.validate()?;
    Ok(grid)
}

fn cmd_tune(args: &TuneArgs, config: &ConfigFile) -> Result<()> {
    let data_path = pick_required(&args.data, &None, "data")?;
    let domain_end = pick(&args.domain_end, &config.domain_end, 10.0);
    let interior_knots = pick(&args.interior_knots, &config.interior_knots, 9);
    let degree = pick(&args.degree, &config.degree, 3);
    let num_fpcs = pick(&args.num_fpcs, &config.p, 2);
    if num_fpcs == 0 {
        return Err(Error::invalid("--p must be at least 1".to_string()));
    }
    let seed = pick(&args.seed, &config.seed, 1);
    let out_table = pick_required(&args.out_table, &None, "out-table")?;
    let out_best = pick_required(&args.out_best, &None, "out-best")?;
    let out_model = pick_required(&args.out_model, &None, "out-model")?;
    let grid_points = pick(&args.grid_points, &config.grid_points, 501);
    let grid = resolve_grid(
        &args.kappa_mu_grid,
        &args.kappa_theta_grid,
        &args.lambda_grid,
        &args.grid_file,
        config,
    )?;

    let data = BinaryFunctionalDataset::load_csv(&data_path, domain_end)?;
    let basis = BSplineBasis::new(domain_end, interior_knots, degree)?;
    let fit_config = fit_config_from(num_fpcs, PenaltyConfig::default(), seed);
    let selection = select_tuning(&data, &basis, &grid, &fit_config)?;
    tuning::write_tuning_table(&out_table, &selection.table)?;
    let best_json = serde_json::to_string_pretty(&selection.best)?;
    std::fs::write(&out_best, format!("{best_json}\n"))?;
    println!(
        "tune: best kappa_mu = {}, kappa_theta = {}, lambda = {}",
        selection.best.kappa_mu, selection.best.kappa_theta, selection.best.lambda
    );

    // Refit at the selected pair, from the same initialization.
    let best_config = fit_config_from(num_fpcs, selection.best, seed);
    let (init, _) = init_from_naive_fpca(&data, &basis, num_fpcs, seed)?;
    let (model, report) = solver::fit(&data, &basis, &best_config, &init)?;
    print_fit_report(&best_config, &report);
    model.save_json(&out_model, Some(&best_config), Some(&report))?;
    println!(
        "wrote {}, {}, and {}",
        out_table.display(),
        out_best.display(),
        out_model.display()
    );
    if let Some(out_grid) = &args.out_grid {
        model.write_grid_csv(out_grid, grid_points)?;
        println!("wrote {}", out_grid.display());
    }
    Ok(())
}

fn cmd_mc(args: &McArgs, config: &ConfigFile) -> Result<()> {
    let case = pick(&args.case, &config.case, 1);
    let n = pick(&args.n, &config.n, 200);
    let design = pick(&args.design, &config.design, "dense".to_string());
    let runs = pick(&args.runs, &config.runs, 20);
    let seed = pick(&args.seed, &config.seed, 1);
    let num_fpcs = pick(&args.num_fpcs, &config.p, 2);
    let support_grid = pick(&args.support_grid, &config.support_grid, 201);
    let out_runs = pick_required(&args.out_runs, &None, "out-runs")?;
    let out_summary = pick_required(&args.out_summary, &None, "out-summary")?;
    let grid = resolve_grid(
        &args.kappa_mu_grid,
        &args.kappa_theta_grid,
        &args.lambda_grid,
        &None,
        config,
    )?;

    let scenario = scenario_from(case, n, &design, seed)?;
    let basis = BSplineBasis::new(simulation::SIM_DOMAIN_END, 9, 3)?;
    let fit_config = fit_config_from(num_fpcs, PenaltyConfig::default(), seed);
    let result = simulation::monte_carlo(
        &scenario,
        &basis,
        &fit_config,
        &grid,
        runs,
        seed,
        support_grid,
    )?;
    simulation::write_runs_csv(&out_runs, &result.runs)?;
    simulation::write_summary_csv(&out_summary, &result.summary)?;
    let s = &result.summary;
    println!(
        "mc: case {case}, {design} design, n = {n}, {runs} runs ({} failed)",
        s.failures
    );
    println!(
        "mean ise_mu = {:.4}, ise_1 = {:.4}, ise_2 = {:.4}",
        s.mean_ise_mu, s.mean_ise_1, s.mean_ise_2
    );
    println!(
        "mean zero-region accuracy = {:.3} / {:.3}, lambda = 0 in {:.0}% of runs",
        s.mean_zero_acc_1,
        s.mean_zero_acc_2,
        100.0 * s.lambda_zero_fraction
    );
    println!("wrote {} and {}", out_runs.display(), out_summary.display());
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs, config: &ConfigFile) -> Result<()> {
    let model_path = pick_required(&args.model, &None, "model")?;
    let truth_path = pick_required(&args.truth, &None, "truth")?;
    let grid_size = pick(&args.grid_size, &config.grid_size, 201);

    let (model, _, _) = SlfpcaModel::load_json(&model_path)?;
    let (truth, truth_file) = Truth::load_json(&truth_path)?;
    if (model.basis.domain_end() - truth_file.domain_end).abs() > 1e-9 {
        return Err(Error::DimensionMismatch(format!(
            "model domain [0, {}] does not match truth domain [0, {}]",
            model.basis.domain_end(),
            truth_file.domain_end
        )));
    }
    let domain_end = model.basis.domain_end();
    let ise_mu = ise(model.mean_fn(), simulation::true_mean, domain_end, false);
    println!("ise_mu: {ise_mu}");
    let assignment = match_components(&model, &truth.fpcs);
    for (j, &k) in assignment.iter().enumerate() {
        let value = ise(model.fpc_fn(k), truth.fpcs.fn_handle(j), domain_end, true);
        let (zero_acc, nonzero_acc) = support_metrics(
            model.fpc_fn(k),
            truth.fpcs.fn_handle(j),
            domain_end,
            grid_size,
        )?;
        println!(
            "phi_{}: matched component {}, ise {value}, zero_region_accuracy {zero_acc}, nonzero_region_accuracy {nonzero_acc}",
            j + 1,
            k + 1
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_preserves_order_and_counts() {
        let mut values = vec![0.1, 0.2, 0.1, 0.3, 0.2];
        let removed = dedup_candidates(&mut values);
        assert_eq!(removed, 2);
        assert_eq!(values, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn missing_required_flag_is_invalid_argument() {
        let err = pick_required::<PathBuf>(&None, &None, "out-data").unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::singular("x")), 4);
        assert_eq!(
            exit_code(&Error::Data {
                path: "f".into(),
                line: 1,
                message: "m".into()
            }),
            3
        );
        assert_eq!(
            exit_code(&Error::OutOfDomain {
                value: 11.0,
                domain_end: 10.0
            }),
            3
        );
    }
}
