//! Initial values for the MM solver.
//!
//! The default scheme treats the signed outcomes as if they were continuous:
//! a GCV-tuned penalized spline fit gives the initial mean, the residuals
//! are pooled into an empirical covariance on a uniform grid whose leading
//! eigenvectors seed the eigenfunction coefficients, and the scores are
//! drawn from centered normals with the estimated eigenvalues as variances.
//! A fully random initializer is also provided.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::bspline::BSplineBasis;
use crate::dataset::{BinaryFunctionalDataset, DesignCache};
use crate::error::{Error, Result};
use crate::solver::{predict_linear, update_mean, working_response, SlfpcaModel};
use crate::tuning;

/// Number of grid nodes used to pool the residual covariance.
const COVARIANCE_GRID: usize = 51;

/// Variance floor for the random score draws.
const EIGENVALUE_FLOOR: f64 = 1e-4;

/// Diagnostics of the covariance-based initializer.
#[derive(Debug, Clone)]
pub struct InitDiagnostics {
    /// Leading covariance eigenvalues on the operator scale.
    pub grid_eigenvalues: Vec<f64>,
    /// True when fewer positive eigenvalues than components were available
    /// and the remaining rows fell back to seeded random directions.
    pub components_reduced: bool,
}

/// Initializer approximating an FPCA of the signed outcomes.
pub fn init_from_naive_fpca(
    data: &BinaryFunctionalDataset,
    basis: &BSplineBasis,
    num_fpcs: usize,
    seed: u64,
) -> Result<(SlfpcaModel, InitDiagnostics)> {
    if num_fpcs == 0 {
        return Err(Error::invalid("num_fpcs must be at least 1".to_string()));
    }
    let design = DesignCache::new(data, basis)?;
    if design.num_obs() < basis.num_basis() {
        return Err(Error::invalid(format!(
            "need at least {} observations to initialize {} coefficients",
            basis.num_basis(),
            basis.num_basis()
        )));
    }
    let grams = basis.grams();
    let q = data.signed_outcomes();

    // Penalized spline regression of q on t, ridge level chosen by GCV
    // (smallest candidate on the plateau when the criterion is flat).
    let candidates = tuning::default_kappa_grid();
    let (argmin_kappa, scores) =
        tuning::gcv_kappa_mu(&design, &q, &grams.roughness, &candidates)?;
    let kappa = tuning::plateau_minimum(&candidates, &scores, tuning::GCV_PLATEAU_TOL)
        .unwrap_or(argmin_kappa);
    let mean_coef = update_mean(&design, &q, kappa, &grams.roughness)?;

    // Residual covariance pooled on a uniform grid, one grid cell of
    // bandwidth on each side; same-observation pairs are excluded so the
    // Bernoulli noise variance does not contaminate the diagonal.
    let t_end = data.domain_end();
    let cell = t_end / (COVARIANCE_GRID - 1) as f64;
    let fitted = design.rows() * &mean_coef;
    let mut sums: DMatrix<f64> = DMatrix::zeros(COVARIANCE_GRID, COVARIANCE_GRID);
    let mut counts = DMatrix::<f64>::zeros(COVARIANCE_GRID, COVARIANCE_GRID);
    let nodes_near = |t: f64| -> std::ops::RangeInclusive<usize> {
        let lo = ((t - cell) / cell).ceil().max(0.0) as usize;
        let hi = (((t + cell) / cell).floor() as usize).min(COVARIANCE_GRID - 1);
        lo..=hi
    };
    for (i, subject) in data.subjects().iter().enumerate() {
        let range = design.subject_range(i);
        let m = subject.times.len();
        for j in 0..m {
            let rj = q[range.start + j] - fitted[range.start + j];
            for jj in 0..m {
                if jj == j {
                    continue;
                }
                let rjj = q[range.start + jj] - fitted[range.start + jj];
                for u in nodes_near(subject.times[j]) {
                    for v in nodes_near(subject.times[jj]) {
                        sums[(u, v)] += rj * rjj;
                        counts[(u, v)] += 1.0;
                    }
                }
            }
        }
    }
    let mut cov: DMatrix<f64> = DMatrix::zeros(COVARIANCE_GRID, COVARIANCE_GRID);
    for u in 0..COVARIANCE_GRID {
        for v in 0..COVARIANCE_GRID {
            if counts[(u, v)] > 0.0 {
                cov[(u, v)] = sums[(u, v)] / counts[(u, v)];
            }
        }
    }
    cov = (&cov + cov.transpose()) * 0.5;

    // Eigendecompose; matrix eigenvalues scale to operator eigenvalues by
    // the grid spacing, and eigenvectors to functions by 1/sqrt(spacing).
    let eigen = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..COVARIANCE_GRID).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let grid_eigenvalues: Vec<f64> = order
        .iter()
        .take(num_fpcs)
        .map(|&j| eigen.eigenvalues[j] * cell)
        .collect();
    let positive = order
        .iter()
        .take_while(|&&j| eigen.eigenvalues[j] * cell > 1e-12)
        .count()
        .min(num_fpcs);

    // Project grid eigenvectors onto the basis by least squares, then
    // normalize in L2.
    let grid_times: Vec<f64> = (0..COVARIANCE_GRID)
        .map(|u| u as f64 * cell)
        .collect();
    let basis_grid = DMatrix::from_fn(COVARIANCE_GRID, basis.num_basis(), |r, c| {
        basis.eval(grid_times[r], 0).expect("grid is in-domain")[c]
    });
    let projection = (basis_grid.transpose() * &basis_grid)
        .cholesky()
        .ok_or_else(|| Error::singular("grid projection system is singular".to_string()))?;

    let mut rng = StdRng::seed_from_u64(seed);
    let l = basis.num_basis();
    let mut fpc_coef = DMatrix::zeros(num_fpcs, l);
    let mut components_reduced = num_fpcs > positive;
    for k in 0..num_fpcs {
        let mut coef = if k < positive {
            let col = eigen.eigenvectors.column(order[k]);
            let values = DVector::from_fn(COVARIANCE_GRID, |u, _| col[u] / cell.sqrt());
            projection.solve(&(basis_grid.transpose() * values))
        } else {
            DVector::zeros(l)
        };
        let mut norm = (&grams.mass * &coef).dot(&coef).max(0.0).sqrt();
        if norm <= 1e-12 {
            // Degenerate direction; fall back to a seeded random one.
            components_reduced = true;
            let normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
            coef = DVector::from_fn(l, |_, _| normal.sample(&mut rng));
            norm = (&grams.mass * &coef).dot(&coef).sqrt();
        }
        fpc_coef.set_row(k, &(coef / norm).transpose());
    }

    // Scores drawn from the estimated eigenvalues, floored away from zero.
    let n = data.num_subjects();
    let mut scores = DMatrix::zeros(n, num_fpcs);
    let sds: Vec<f64> = (0..num_fpcs)
        .map(|k| {
            grid_eigenvalues
                .get(k)
                .copied()
                .unwrap_or(0.0)
                .max(EIGENVALUE_FLOOR)
                .sqrt()
        })
        .collect();
    for i in 0..n {
        for k in 0..num_fpcs {
            let normal = Normal::new(0.0, sds[k]).expect("finite standard deviation");
            scores[(i, k)] = normal.sample(&mut rng);
        }
    }

    let model = SlfpcaModel {
        basis: basis.clone(),
        mean_coef,
        fpc_coef,
        scores,
        normalized: false,
    };
    debug_assert!(model.mean_coef.iter().all(|v| v.is_finite()));
    Ok((
        model,
        InitDiagnostics {
            grid_eigenvalues,
            components_reduced,
        },
    ))
}

/// Fully random initializer: zero mean, random normalized eigenfunction
/// rows, standard normal scores.
pub fn init_random(
    basis: &BSplineBasis,
    num_subjects: usize,
    num_fpcs: usize,
    seed: u64,
) -> Result<SlfpcaModel> {
    if num_fpcs == 0 || num_subjects == 0 {
        return Err(Error::invalid(
            "need at least one subject and one component".to_string(),
        ));
    }
    let grams = basis.grams();
    let l = basis.num_basis();
    let mut rng = StdRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
    let mut fpc_coef = DMatrix::zeros(num_fpcs, l);
    for k in 0..num_fpcs {
        let coef = DVector::from_fn(l, |_, _| normal.sample(&mut rng));
        let norm = (&grams.mass * &coef).dot(&coef).sqrt();
        fpc_coef.set_row(k, &(coef / norm).transpose());
    }
    let scores = DMatrix::from_fn(num_subjects, num_fpcs, |_, _| normal.sample(&mut rng));
    Ok(SlfpcaModel {
        basis: basis.clone(),
        mean_coef: DVector::zeros(l),
        fpc_coef,
        scores,
        normalized: false,
    })
}

/// Working responses under a model, as used for the first surrogate.
pub fn initial_working_responses(
    design: &DesignCache,
    data: &BinaryFunctionalDataset,
    model: &SlfpcaModel,
) -> (DVector<f64>, DVector<f64>) {
    let q = data.signed_outcomes();
    let x = predict_linear(design, &model.mean_coef, &model.fpc_coef, &model.scores);
    let z = DVector::from_fn(x.len(), |r, _| working_response(x[r], q[r]));
    (z, x)
}
