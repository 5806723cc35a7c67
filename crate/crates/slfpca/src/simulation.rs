//! Data generation for the benchmark cases, integrated-squared-error and
//! support-recovery metrics, and a seeded Monte Carlo driver.
//!
//! Latent trajectories follow a truncated Karhunen-Loeve expansion with two
//! components; binary outcomes are Bernoulli draws through the logistic link.
//! Cases 1 and 2 use locally sparse eigenfunctions built from single B-spline
//! bumps on the generator basis; cases 3 and 4 use trigonometric
//! eigenfunctions that are non-zero over the whole domain.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::dataset::{BinaryFunctionalDataset, Subject};
use crate::error::{Error, Result};
use crate::init::init_from_naive_fpca;
use crate::penalty::PenaltyConfig;
use crate::solver::{self, logistic, FitConfig, SlfpcaModel};
use crate::tuning::{select_tuning, TuningGrid};

/// Domain end of the benchmark scenarios.
pub const SIM_DOMAIN_END: f64 = 10.0;

/// Number of points of the composite Simpson rule used by [`ise`] and the
/// component matching.
const ISE_GRID: usize = 2001;

/// Truth values below this are treated as exactly zero.
const ZERO_TRUTH_TOL: f64 = 1e-10;

/// Estimates below this magnitude count as zero for support recovery.
const ZERO_EST_TOL: f64 = 1e-6;

/// Observation design of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Every subject shares a uniform grid of `dense_grid` points.
    Dense,
    /// 8 to 12 uniformly drawn observation times per subject.
    Sparse,
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Design::Dense),
            "sparse" => Ok(Design::Sparse),
            other => Err(Error::invalid(format!(
                "design must be `dense` or `sparse`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Design::Dense => write!(f, "dense"),
            Design::Sparse => write!(f, "sparse"),
        }
    }
}

/// One simulation scenario.
#[derive(Debug, Clone)]
pub struct SimScenario {
    /// Benchmark case, 1 through 4.
    pub case: u8,
    pub n: usize,
    pub design: Design,
    /// Variances of the two component scores.
    pub eigenvalues: (f64, f64),
    pub seed: u64,
    /// Grid size of the dense design.
    pub dense_grid: usize,
}

impl SimScenario {
    pub fn new(case: u8, n: usize, design: Design, seed: u64) -> Result<Self> {
        if !(1..=4).contains(&case) {
            return Err(Error::invalid(format!("unknown case {case}")));
        }
        if n == 0 {
            return Err(Error::invalid("need at least one subject".to_string()));
        }
        Ok(Self {
            case,
            n,
            design,
            eigenvalues: (9.0, 4.0),
            seed,
            dense_grid: 51,
        })
    }
}

/// True mean of every scenario: `2 sin(pi t / 5) / sqrt(5)`.
pub fn true_mean(t: f64) -> f64 {
    2.0 * (std::f64::consts::PI * t / 5.0).sin() / 5f64.sqrt()
}

/// The two true eigenfunctions of a benchmark case, unit-normalized in L2.
#[derive(Debug, Clone)]
pub struct TrueFpcs {
    case: u8,
    basis: BSplineBasis,
    /// Basis coefficients for the locally sparse cases (rows `phi_1, phi_2`).
    coef: Option<DMatrix<f64>>,
}

impl TrueFpcs {
    pub fn new(case: u8) -> Result<Self> {
        if !(1..=4).contains(&case) {
            return Err(Error::invalid(format!("unknown case {case}")));
        }
        let basis = BSplineBasis::new(SIM_DOMAIN_END, 9, 3)?;
        let coef = match case {
            1 | 2 => {
                let grams = basis.grams();
                let l = basis.num_basis();
                let bump = |idx: usize| {
                    let mut c = DVector::zeros(l);
                    c[idx] = 1.0;
                    c
                };
                let normalize = |c: DVector<f64>| {
                    let norm = (&grams.mass * &c).dot(&c).sqrt();
                    c / norm
                };
                // 1-indexed basis functions 4, 7, and 10.
                let rows = if case == 1 {
                    [normalize(bump(3)), normalize(bump(9))]
                } else {
                    [normalize(bump(6)), normalize(bump(3) - bump(9))]
                };
                let mut coef = DMatrix::zeros(2, l);
                coef.set_row(0, &rows[0].transpose());
                coef.set_row(1, &rows[1].transpose());
                Some(coef)
            }
            _ => None,
        };
        Ok(Self { case, basis, coef })
    }

    pub fn case(&self) -> u8 {
        self.case
    }

    /// Exact generator-basis coefficients (locally sparse cases only).
    pub fn coefficients(&self) -> Option<&DMatrix<f64>> {
        self.coef.as_ref()
    }

    /// Evaluates the `k`-th true eigenfunction (`k` is 0-based).
    pub fn eval(&self, k: usize, t: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let root5 = 5f64.sqrt();
        match (&self.coef, self.case, k) {
            (Some(coef), _, _) => {
                let values = self
                    .basis
                    .eval(t.clamp(0.0, SIM_DOMAIN_END), 0)
                    .expect("clamped evaluation cannot fail");
                coef.row(k).transpose().dot(&values)
            }
            (None, 3, 0) | (None, 4, 0) => (pi * t / 5.0).cos() / root5,
            (None, 3, 1) => (pi * t / 5.0).sin() / root5,
            (None, 4, 1) => (2.0 * pi * t / 5.0).cos() / root5,
            _ => panic!("component {k} out of range"),
        }
    }

    /// The `k`-th eigenfunction as a closure.
    pub fn fn_handle(&self, k: usize) -> impl Fn(f64) -> f64 + '_ {
        move |t| self.eval(k, t)
    }
}

/// Ground truth attached to a generated dataset.
#[derive(Debug, Clone)]
pub struct Truth {
    pub fpcs: TrueFpcs,
    pub eigenvalues: (f64, f64),
    /// True scores, `n x 2`.
    pub scores: DMatrix<f64>,
}

/// Draws a dataset from the scenario's latent model. Reproducible: per
/// subject the two scores are drawn first, then the observation design, then
/// the outcomes in time order.
pub fn generate(scenario: &SimScenario) -> Result<(BinaryFunctionalDataset, Truth)> {
    if !(1..=4).contains(&scenario.case) {
        return Err(Error::invalid(format!("unknown case {}", scenario.case)));
    }
    if scenario.dense_grid < 2 {
        return Err(Error::invalid("dense grid needs at least 2 points".to_string()));
    }
    let fpcs = TrueFpcs::new(scenario.case)?;
    let mut rng = StdRng::seed_from_u64(scenario.seed);
    let (ev1, ev2) = scenario.eigenvalues;
    let draw1 = Normal::new(0.0, ev1.max(0.0).sqrt())
        .map_err(|e| Error::invalid(format!("bad eigenvalue: {e}")))?;
    let draw2 = Normal::new(0.0, ev2.max(0.0).sqrt())
        .map_err(|e| Error::invalid(format!("bad eigenvalue: {e}")))?;

    let mut scores = DMatrix::zeros(scenario.n, 2);
    let mut subjects = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let xi1 = draw1.sample(&mut rng);
        let xi2 = draw2.sample(&mut rng);
        scores[(i, 0)] = xi1;
        scores[(i, 1)] = xi2;
        let times: Vec<f64> = match scenario.design {
            Design::Dense => (0..scenario.dense_grid)
                .map(|j| SIM_DOMAIN_END * j as f64 / (scenario.dense_grid - 1) as f64)
                .collect(),
            Design::Sparse => {
                let m = rng.random_range(8..=12);
                let mut t: Vec<f64> = (0..m)
                    .map(|_| rng.random_range(0.0..SIM_DOMAIN_END))
                    .collect();
                t.sort_by(f64::total_cmp);
                t
            }
        };
        let outcomes = times
            .iter()
            .map(|&t| {
                let x = true_mean(t) + xi1 * fpcs.eval(0, t) + xi2 * fpcs.eval(1, t);
                u8::from(rng.random_range(0.0..1.0) < logistic(x))
            })
            .collect();
        subjects.push(Subject {
            id: (i + 1).to_string(),
            times,
            outcomes,
        });
    }
    let data = BinaryFunctionalDataset::from_subjects(subjects, SIM_DOMAIN_END)?;
    Ok((
        data,
        Truth {
            fpcs,
            eigenvalues: scenario.eigenvalues,
            scores,
        },
    ))
}

fn simpson_squared_diff(
    estimate: &impl Fn(f64) -> f64,
    truth: &impl Fn(f64) -> f64,
    domain_end: f64,
    sign: f64,
) -> f64 {
    let n = ISE_GRID - 1;
    let h = domain_end / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let t = i as f64 * h;
        let diff = truth(t) - sign * estimate(t);
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * diff * diff;
    }
    sum * h / 3.0
}

/// Integrated squared error by composite Simpson quadrature. With
/// `sign_align` the better of the two orientations is reported, matching the
/// sign indeterminacy of eigenfunctions.
pub fn ise(
    estimate: impl Fn(f64) -> f64,
    truth: impl Fn(f64) -> f64,
    domain_end: f64,
    sign_align: bool,
) -> f64 {
    let direct = simpson_squared_diff(&estimate, &truth, domain_end, 1.0);
    if sign_align {
        direct.min(simpson_squared_diff(&estimate, &truth, domain_end, -1.0))
    } else {
        direct
    }
}

/// Fractions of the grid on which the estimate recovers the truth's zero
/// region and non-zero region. A truth without zero points scores a zero
///-region accuracy of 1 by convention.
pub fn support_metrics(
    estimate: impl Fn(f64) -> f64,
    truth: impl Fn(f64) -> f64,
    domain_end: f64,
    grid_size: usize,
) -> Result<(f64, f64)> {
    if grid_size < 100 {
        return Err(Error::invalid(format!(
            "support grid needs at least 100 points, got {grid_size}"
        )));
    }
    let mut inner = 0.0;
    let mut points = Vec::with_capacity(grid_size);
    for i in 0..grid_size {
        let t = domain_end * i as f64 / (grid_size - 1) as f64;
        let e = estimate(t);
        let f = truth(t);
        inner += e * f;
        points.push((e, f));
    }
    let sign = if inner >= 0.0 { 1.0 } else { -1.0 };
    let mut zero_total = 0usize;
    let mut zero_hits = 0usize;
    let mut nonzero_total = 0usize;
    let mut nonzero_hits = 0usize;
    for (e, f) in points {
        if f.abs() <= ZERO_TRUTH_TOL {
            zero_total += 1;
            if e.abs() < ZERO_EST_TOL {
                zero_hits += 1;
            }
        } else {
            nonzero_total += 1;
            if (sign * e).abs() >= ZERO_EST_TOL {
                nonzero_hits += 1;
            }
        }
    }
    let zero_acc = if zero_total == 0 {
        1.0
    } else {
        zero_hits as f64 / zero_total as f64
    };
    let nonzero_acc = if nonzero_total == 0 {
        1.0
    } else {
        nonzero_hits as f64 / nonzero_total as f64
    };
    Ok((zero_acc, nonzero_acc))
}

/// Greedy matching of estimated components to the two truths by the largest
/// absolute L2 inner product. Returns, for each truth index, the matched
/// estimated component index.
pub fn match_components(model: &SlfpcaModel, fpcs: &TrueFpcs) -> Vec<usize> {
    let p = model.num_fpcs();
    let truths = 2usize.min(p);
    let n = ISE_GRID - 1;
    let h = model.basis.domain_end() / n as f64;
    let mut overlap = vec![vec![0.0f64; p]; truths];
    for i in 0..=n {
        let t = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        for (j, row) in overlap.iter_mut().enumerate() {
            let truth_val = fpcs.eval(j, t);
            if truth_val == 0.0 {
                continue;
            }
            for (k, slot) in row.iter_mut().enumerate() {
                *slot += w * truth_val * model.eval_fpc(k, t).expect("grid is in-domain");
            }
        }
    }
    let mut assignment = vec![usize::MAX; truths];
    let mut used = vec![false; p];
    for _ in 0..truths {
        let mut best = (0usize, 0usize, -1.0f64);
        for j in 0..truths {
            if assignment[j] != usize::MAX {
                continue;
            }
            for k in 0..p {
                if used[k] {
                    continue;
                }
                let score = overlap[j][k].abs();
                if score > best.2 {
                    best = (j, k, score);
                }
            }
        }
        assignment[best.0] = best.1;
        used[best.1] = true;
    }
    assignment
}

/// One Monte Carlo run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: usize,
    pub ise_mu: f64,
    pub ise_1: f64,
    pub ise_2: f64,
    pub zero_acc_1: f64,
    pub zero_acc_2: f64,
    pub lambda_selected: f64,
    pub kappa_theta_selected: f64,
    pub converged: bool,
    pub failed: bool,
}

/// Mean/standard-deviation summary over the successful runs.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub runs_used: usize,
    pub failures: usize,
    pub mean_ise_mu: f64,
    pub sd_ise_mu: f64,
    pub mean_ise_1: f64,
    pub sd_ise_1: f64,
    pub mean_ise_2: f64,
    pub sd_ise_2: f64,
    pub mean_zero_acc_1: f64,
    pub sd_zero_acc_1: f64,
    pub mean_zero_acc_2: f64,
    pub sd_zero_acc_2: f64,
    pub mean_lambda: f64,
    pub sd_lambda: f64,
    pub mean_kappa_theta: f64,
    pub sd_kappa_theta: f64,
    pub converged_fraction: f64,
    pub lambda_zero_fraction: f64,
}

/// Monte Carlo outcome: per-run rows in run order plus the summary.
#[derive(Debug, Clone)]
pub struct McResult {
    pub runs: Vec<RunRecord>,
    pub summary: McSummary,
}

/// Runs the full pipeline (generate, select tuning, refit at the best pair,
/// score) `runs` times; run `r` uses seed `base_seed + r`. Runs execute in
/// parallel; records and the summary are assembled in run order. Failed runs
/// are recorded with NaN metrics and excluded from the summary.
pub fn monte_carlo(
    scenario: &SimScenario,
    basis: &BSplineBasis,
    config: &FitConfig,
    grid: &TuningGrid,
    runs: usize,
    base_seed: u64,
    support_grid: usize,
) -> Result<McResult> {
    if runs == 0 {
        return Err(Error::invalid("need at least one run".to_string()));
    }
    grid.validate()?;
    config.validate()?;
    let records: Vec<RunRecord> = (1..=runs)
        .into_par_iter()
        .map(|run| {
            let seed = base_seed + run as u64;
            match single_run(scenario, basis, config, grid, run, seed, support_grid) {
                Ok(record) => record,
                Err(_) => RunRecord {
                    run,
                    ise_mu: f64::NAN,
                    ise_1: f64::NAN,
                    ise_2: f64::NAN,
                    zero_acc_1: f64::NAN,
                    zero_acc_2: f64::NAN,
                    lambda_selected: f64::NAN,
                    kappa_theta_selected: f64::NAN,
                    converged: false,
                    failed: true,
                },
            }
        })
        .collect();
    let summary = summarize(&records);
    Ok(McResult {
        runs: records,
        summary,
    })
}

fn single_run(
    scenario: &SimScenario,
    basis: &BSplineBasis,
    config: &FitConfig,
    grid: &TuningGrid,
    run: usize,
    seed: u64,
    support_grid: usize,
) -> Result<RunRecord> {
    let mut sc = scenario.clone();
    sc.seed = seed;
    let (data, truth) = generate(&sc)?;
    let mut cfg = config.clone();
    cfg.seed = seed;
    let selection = select_tuning(&data, basis, grid, &cfg)?;
    cfg.penalties = selection.best;
    let (init_model, _) = init_from_naive_fpca(&data, basis, cfg.num_fpcs, cfg.seed)?;
    let (model, report) = solver::fit(&data, basis, &cfg, &init_model)?;

    let domain_end = basis.domain_end();
    let ise_mu = ise(model.mean_fn(), true_mean, domain_end, false);
    let assignment = match_components(&model, &truth.fpcs);
    let mut ise_k = [f64::NAN; 2];
    let mut zero_acc = [f64::NAN; 2];
    for j in 0..2 {
        // Fewer fitted components than truths leaves the extras as NaN.
        let Some(&k) = assignment.get(j) else {
            continue;
        };
        ise_k[j] = ise(model.fpc_fn(k), truth.fpcs.fn_handle(j), domain_end, true);
        let (z, _) = support_metrics(
            model.fpc_fn(k),
            truth.fpcs.fn_handle(j),
            domain_end,
            support_grid,
        )?;
        zero_acc[j] = z;
    }
    Ok(RunRecord {
        run,
        ise_mu,
        ise_1: ise_k[0],
        ise_2: ise_k[1],
        zero_acc_1: zero_acc[0],
        zero_acc_2: zero_acc[1],
        lambda_selected: selection.best.lambda,
        kappa_theta_selected: selection.best.kappa_theta,
        converged: report.converged,
        failed: false,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(records: &[RunRecord]) -> McSummary {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| !r.failed).collect();
    let collect = |f: fn(&RunRecord) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
    let (mean_ise_mu, sd_ise_mu) = mean_sd(&collect(|r| r.ise_mu));
    let (mean_ise_1, sd_ise_1) = mean_sd(&collect(|r| r.ise_1));
    let (mean_ise_2, sd_ise_2) = mean_sd(&collect(|r| r.ise_2));
    let (mean_zero_acc_1, sd_zero_acc_1) = mean_sd(&collect(|r| r.zero_acc_1));
    let (mean_zero_acc_2, sd_zero_acc_2) = mean_sd(&collect(|r| r.zero_acc_2));
    let (mean_lambda, sd_lambda) = mean_sd(&collect(|r| r.lambda_selected));
    let (mean_kappa_theta, sd_kappa_theta) = mean_sd(&collect(|r| r.kappa_theta_selected));
    let converged_fraction = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().filter(|r| r.converged).count() as f64 / ok.len() as f64
    };
    let lambda_zero_fraction = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().filter(|r| r.lambda_selected == 0.0).count() as f64 / ok.len() as f64
    };
    McSummary {
        runs_used: ok.len(),
        failures: records.len() - ok.len(),
        mean_ise_mu,
        sd_ise_mu,
        mean_ise_1,
        sd_ise_1,
        mean_ise_2,
        sd_ise_2,
        mean_zero_acc_1,
        sd_zero_acc_1,
        mean_zero_acc_2,
        sd_zero_acc_2,
        mean_lambda,
        sd_lambda,
        mean_kappa_theta,
        sd_kappa_theta,
        converged_fraction,
        lambda_zero_fraction,
    }
}

/// Writes per-run rows:
/// `run,ise_mu,ise_1,ise_2,zero_acc_1,zero_acc_2,lambda_selected,kappa_theta_selected,converged`.
pub fn write_runs_csv(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "run,ise_mu,ise_1,ise_2,zero_acc_1,zero_acc_2,lambda_selected,kappa_theta_selected,converged"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run,
            r.ise_mu,
            r.ise_1,
            r.ise_2,
            r.zero_acc_1,
            r.zero_acc_2,
            r.lambda_selected,
            r.kappa_theta_selected,
            r.converged
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the mean/sd summary with a failure-count column.
pub fn write_summary_csv(path: impl AsRef<Path>, summary: &McSummary) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "stat,ise_mu,ise_1,ise_2,zero_acc_1,zero_acc_2,lambda_selected,kappa_theta_selected,converged,failures"
    )?;
    writeln!(
        out,
        "mean,{},{},{},{},{},{},{},{},{}",
        summary.mean_ise_mu,
        summary.mean_ise_1,
        summary.mean_ise_2,
        summary.mean_zero_acc_1,
        summary.mean_zero_acc_2,
        summary.mean_lambda,
        summary.mean_kappa_theta,
        summary.converged_fraction,
        summary.failures
    )?;
    writeln!(
        out,
        "sd,{},{},{},{},{},{},{},,{}",
        summary.sd_ise_mu,
        summary.sd_ise_1,
        summary.sd_ise_2,
        summary.sd_zero_acc_1,
        summary.sd_zero_acc_2,
        summary.sd_lambda,
        summary.sd_kappa_theta,
        summary.failures
    )?;
    out.flush()?;
    Ok(())
}

/// Serialized ground truth: grid evaluations of the mean and eigenfunctions
/// plus the score matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub case: u8,
    #[serde(rename = "T")]
    pub domain_end: f64,
    pub eigenvalues: Vec<f64>,
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
}

impl Truth {
    /// Evaluates the truth on a uniform grid and writes it as JSON.
    pub fn save_json(&self, path: impl AsRef<Path>, grid_points: usize) -> Result<()> {
        let grid: Vec<f64> = (0..grid_points)
            .map(|i| SIM_DOMAIN_END * i as f64 / (grid_points - 1) as f64)
            .collect();
        let file = TruthFile {
            case: self.fpcs.case(),
            domain_end: SIM_DOMAIN_END,
            eigenvalues: vec![self.eigenvalues.0, self.eigenvalues.1],
            mu: grid.iter().map(|&t| true_mean(t)).collect(),
            phi: (0..2)
                .map(|k| grid.iter().map(|&t| self.fpcs.eval(k, t)).collect())
                .collect(),
            xi: (0..self.scores.nrows())
                .map(|i| self.scores.row(i).iter().copied().collect())
                .collect(),
            grid,
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &file)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    /// Loads a truth file and rebuilds the exact case functions.
    pub fn load_json(path: impl AsRef<Path>) -> Result<(Self, TruthFile)> {
        let file: TruthFile =
            serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        let fpcs = TrueFpcs::new(file.case)?;
        let n = file.xi.len();
        let scores = DMatrix::from_fn(n, 2, |i, k| file.xi[i][k]);
        let eigenvalues = (
            file.eigenvalues.first().copied().unwrap_or(0.0),
            file.eigenvalues.get(1).copied().unwrap_or(0.0),
        );
        Ok((
            Truth {
                fpcs,
                eigenvalues,
                scores,
            },
            file,
        ))
    }
}

/// Least-squares projection of a function onto the basis over a fine grid.
pub fn project_onto_basis(
    f: impl Fn(f64) -> f64,
    basis: &BSplineBasis,
    grid_points: usize,
) -> Result<DVector<f64>> {
    let l = basis.num_basis();
    let rows = DMatrix::from_fn(grid_points, l, |r, c| {
        let t = basis.domain_end() * r as f64 / (grid_points - 1) as f64;
        basis.eval(t, 0).expect("grid is in-domain")[c]
    });
    let values = DVector::from_fn(grid_points, |r, _| {
        f(basis.domain_end() * r as f64 / (grid_points - 1) as f64)
    });
    (rows.transpose() * &rows)
        .cholesky()
        .ok_or_else(|| Error::singular("projection system is singular".to_string()))
        .map(|chol| chol.solve(&(rows.transpose() * values)))
}

/// Median absolute score error when only the scores are estimated (mean and
/// eigenfunctions held at the truth), for each dense grid size. Case 1 is
/// used because its eigenfunctions live exactly in the generator basis.
pub fn score_error_trend(
    n: usize,
    grid_sizes: &[usize],
    replicates: usize,
    base_seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let basis = BSplineBasis::new(SIM_DOMAIN_END, 9, 3)?;
    let fpcs = TrueFpcs::new(1)?;
    let theta_true = fpcs
        .coefficients()
        .expect("case 1 is basis-exact")
        .clone();
    let mu_true = project_onto_basis(true_mean, &basis, 501)?;
    let config = FitConfig {
        tol_outer: 1e-6,
        max_outer_iter: 200,
        ..FitConfig::default()
    };
    let mut out = Vec::with_capacity(grid_sizes.len());
    for &grid in grid_sizes {
        let mut errors: Vec<f64> = Vec::with_capacity(replicates * n * 2);
        for rep in 0..replicates {
            let mut scenario = SimScenario::new(1, n, Design::Dense, base_seed + rep as u64)?;
            scenario.dense_grid = grid;
            let (data, truth) = generate(&scenario)?;
            let estimated = solver::fit_scores_only(&data, &basis, &mu_true, &theta_true, &config)?;
            for i in 0..n {
                for k in 0..2 {
                    errors.push((estimated[(i, k)] - truth.scores[(i, k)]).abs());
                }
            }
        }
        errors.sort_by(f64::total_cmp);
        let median = if errors.len() % 2 == 1 {
            errors[errors.len() / 2]
        } else {
            0.5 * (errors[errors.len() / 2 - 1] + errors[errors.len() / 2])
        };
        out.push((grid, median));
    }
    Ok(out)
}

/// Default penalty configuration used by the Monte Carlo harness when a
/// fixed (non-selected) configuration is wanted.
pub fn default_mc_fit_config(seed: u64) -> FitConfig {
    FitConfig {
        num_fpcs: 2,
        penalties: PenaltyConfig::default(),
        seed,
        ..FitConfig::default()
    }
}
