//! Majorization-minimization solver for the penalized Bernoulli likelihood.
//!
//! Each outer iteration majorizes the negative log-likelihood by a quadratic
//! in the latent values (through the working responses), then minimizes the
//! surrogate blockwise in closed form: the mean coefficients by a penalized
//! least-squares solve, each score by a one-dimensional projection, and each
//! eigenfunction coefficient vector by a ridge solve inside a sub-iteration
//! that re-majorizes the fSCAD penalty, shrinks small coefficients to zero,
//! and pins the boundary coefficients. Estimated eigenfunctions are
//! normalized to unit L2 norm at the end, with scores rescaled to match.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineBasis, BasisGrams, BasisSpec};
use crate::dataset::{BinaryFunctionalDataset, DesignCache};
use crate::error::{Error, Result};
use crate::penalty::{self, PenaltyConfig};

/// Score denominators below this are treated as degenerate: a subject with
/// no observations on the component's support carries no information about
/// its score, so the score is set to zero.
pub(crate) const SCORE_DENOM_FLOOR: f64 = 1e-10;

/// Coefficient norms below this cannot be normalized meaningfully; the
/// component is left as identically zero.
const DEAD_COMPONENT_NORM: f64 = 1e-12;

/// Overflow-safe logistic function `exp(v) / (1 + exp(v))`.
pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log pi(v) = -log(1 + exp(-v))`, stable for large `|v|`.
pub fn log_logistic(v: f64) -> f64 {
    if v >= 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

/// Working response of the logistic majorizer:
/// `z = x0 + 4 q {1 - pi(q x0)}`.
pub fn working_response(x0: f64, q: f64) -> f64 {
    x0 + 4.0 * q * (1.0 - logistic(q * x0))
}

/// Solver configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of functional principal components `p`.
    pub num_fpcs: usize,
    pub penalties: PenaltyConfig,
    pub max_outer_iter: usize,
    pub max_sub_iter: usize,
    /// Relative-change tolerance for the outer loop and the joint
    /// score/coefficient loop of each component.
    pub tol_outer: f64,
    /// Absolute-change tolerance for the coefficient sub-iteration.
    pub tol_sub: f64,
    /// Cap on the alternating score/coefficient passes per component within
    /// one outer iteration; the outer re-majorization supplies the rest of
    /// the convergence.
    #[serde(default = "default_max_joint_iter")]
    pub max_joint_iter: usize,
    /// Coefficients below this magnitude are shrunk to exact zero while the
    /// sparseness penalty is active.
    pub shrink_threshold: f64,
    /// Pin the first and last coefficients of every eigenfunction to zero
    /// while the sparseness penalty is active (boundary-effect mitigation).
    /// With `lambda = 0` the whole sparse machinery is bypassed and the fit
    /// reduces to plain penalized FPCA, so the pin is not applied.
    pub zero_boundary: bool,
    pub seed: u64,
}

fn default_max_joint_iter() -> usize {
    20
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            num_fpcs: 2,
            penalties: PenaltyConfig::default(),
            max_outer_iter: 100,
            max_sub_iter: 50,
            tol_outer: 1e-4,
            tol_sub: 1e-5,
            max_joint_iter: default_max_joint_iter(),
            shrink_threshold: 1e-3,
            zero_boundary: true,
            seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_fpcs == 0 {
            return Err(Error::invalid("num_fpcs must be at least 1".to_string()));
        }
        if self.max_outer_iter == 0 || self.max_sub_iter == 0 || self.max_joint_iter == 0 {
            return Err(Error::invalid(
                "iteration limits must be at least 1".to_string(),
            ));
        }
        for (name, value) in [("tol_outer", self.tol_outer), ("tol_sub", self.tol_sub)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !self.shrink_threshold.is_finite() || self.shrink_threshold < 0.0 {
            return Err(Error::invalid(format!(
                "shrink_threshold must be non-negative, got {}",
                self.shrink_threshold
            )));
        }
        self.penalties.validate()
    }
}

/// Fitted SLFPCA model: mean coefficients, eigenfunction coefficient rows,
/// and per-subject scores.
#[derive(Debug, Clone)]
pub struct SlfpcaModel {
    pub basis: BSplineBasis,
    /// Mean-function coefficients, length `L`.
    pub mean_coef: DVector<f64>,
    /// Eigenfunction coefficients, `p x L` (row `k` holds `theta_k`).
    pub fpc_coef: DMatrix<f64>,
    /// Scores, `n x p`.
    pub scores: DMatrix<f64>,
    /// Whether the eigenfunctions have been normalized to unit L2 norm.
    pub normalized: bool,
}

impl SlfpcaModel {
    pub fn num_fpcs(&self) -> usize {
        self.fpc_coef.nrows()
    }

    pub fn num_subjects(&self) -> usize {
        self.scores.nrows()
    }

    pub fn eval_mean(&self, t: f64) -> Result<f64> {
        Ok(self.mean_coef.dot(&self.basis.eval(t, 0)?))
    }

    pub fn eval_fpc(&self, k: usize, t: f64) -> Result<f64> {
        if k >= self.num_fpcs() {
            return Err(Error::invalid(format!("component {k} out of range")));
        }
        Ok(self.fpc_coef.row(k).transpose().dot(&self.basis.eval(t, 0)?))
    }

    /// Mean function as a closure on the closed domain.
    pub fn mean_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |t| {
            self.eval_mean(t.clamp(0.0, self.basis.domain_end()))
                .expect("clamped evaluation cannot fail")
        }
    }

    /// The `k`-th eigenfunction as a closure on the closed domain.
    pub fn fpc_fn(&self, k: usize) -> impl Fn(f64) -> f64 + '_ {
        move |t| {
            self.eval_fpc(k, t.clamp(0.0, self.basis.domain_end()))
                .expect("clamped evaluation cannot fail")
        }
    }

    /// Serializes the model (plus an optional config echo and fit report) as
    /// JSON: `{basis: {T, K, d, knots}, mu, theta, scores, config, report}`.
    pub fn save_json(
        &self,
        path: impl AsRef<Path>,
        config: Option<&FitConfig>,
        report: Option<&FitReport>,
    ) -> Result<()> {
        let file = ModelFile {
            basis: self.basis.spec(),
            mu: self.mean_coef.iter().copied().collect(),
            theta: (0..self.num_fpcs())
                .map(|k| self.fpc_coef.row(k).iter().copied().collect())
                .collect(),
            scores: (0..self.num_subjects())
                .map(|i| self.scores.row(i).iter().copied().collect())
                .collect(),
            config: config.cloned(),
            report: report.cloned(),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &file)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    /// Loads a model written by [`SlfpcaModel::save_json`].
    pub fn load_json(
        path: impl AsRef<Path>,
    ) -> Result<(Self, Option<FitConfig>, Option<FitReport>)> {
        let file: ModelFile = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        let basis = BSplineBasis::from_spec(&file.basis)?;
        let l = basis.num_basis();
        if file.mu.len() != l || file.theta.iter().any(|row| row.len() != l) {
            return Err(Error::DimensionMismatch(
                "coefficient lengths do not match the basis".to_string(),
            ));
        }
        let p = file.theta.len();
        if file.scores.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch(
                "score rows do not match the number of components".to_string(),
            ));
        }
        let n = file.scores.len();
        let model = SlfpcaModel {
            basis,
            mean_coef: DVector::from_vec(file.mu),
            fpc_coef: DMatrix::from_fn(p, l, |k, j| file.theta[k][j]),
            scores: DMatrix::from_fn(n, p, |i, k| file.scores[i][k]),
            normalized: true,
        };
        Ok((model, file.config, file.report))
    }

    /// Writes `t,mu_hat,phi_1,...,phi_p` evaluated on a uniform grid.
    pub fn write_grid_csv(&self, path: impl AsRef<Path>, points: usize) -> Result<()> {
        if points < 2 {
            return Err(Error::invalid("grid needs at least 2 points".to_string()));
        }
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "t,mu_hat")?;
        for k in 1..=self.num_fpcs() {
            write!(out, ",phi_{k}")?;
        }
        writeln!(out)?;
        let t_end = self.basis.domain_end();
        for i in 0..points {
            let t = t_end * i as f64 / (points - 1) as f64;
            write!(out, "{t},{}", self.eval_mean(t)?)?;
            for k in 0..self.num_fpcs() {
                write!(out, ",{}", self.eval_fpc(k, t)?)?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    basis: BasisSpec,
    mu: Vec<f64>,
    theta: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    config: Option<FitConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    report: Option<FitReport>,
}

/// Fit diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Working surrogate objective after each outer iteration (quadratic
    /// residual plus roughness and frozen-weight sparseness terms).
    pub objective_trace: Vec<f64>,
    /// Exact penalized negative log-likelihood after each outer iteration,
    /// in the absorbed scaling the closed-form updates minimize.
    pub penalized_nll_trace: Vec<f64>,
    /// Final penalized negative log-likelihood at the normalized estimates.
    pub penalized_nll: f64,
    pub converged: bool,
    /// Whether each component's joint score/coefficient loop met tolerance
    /// during the last outer iteration.
    pub fpc_converged: Vec<bool>,
    pub outer_iterations: usize,
    /// Degrees of freedom per component at the selected smoothing level.
    pub df: Vec<f64>,
}

/// Latent values `x_ij = B_ij' mu + B_ij' Theta' xi_i`, stacked subject-major.
pub fn predict_linear(
    design: &DesignCache,
    mean_coef: &DVector<f64>,
    fpc_coef: &DMatrix<f64>,
    scores: &DMatrix<f64>,
) -> DVector<f64> {
    let mut x = design.rows() * mean_coef;
    for k in 0..fpc_coef.nrows() {
        let btk = design.rows() * fpc_coef.row(k).transpose();
        for i in 0..design.num_subjects() {
            let s = scores[(i, k)];
            if s != 0.0 {
                for r in design.subject_range(i) {
                    x[r] += s * btk[r];
                }
            }
        }
    }
    x
}

/// Bernoulli log-likelihood `sum_ij log pi(q_ij x_ij)`.
pub fn log_likelihood(q: &DVector<f64>, x: &DVector<f64>) -> f64 {
    q.iter()
        .zip(x.iter())
        .map(|(&qi, &xi)| log_logistic(qi * xi))
        .sum()
}

/// Exact penalized negative log-likelihood. The roughness terms carry the
/// absorbed 1/8 factor of the closed-form updates, so this value decreases
/// monotonically across outer iterations when the sparseness penalty is off.
pub fn penalized_nll(
    q: &DVector<f64>,
    x: &DVector<f64>,
    mean_coef: &DVector<f64>,
    fpc_coef: &DMatrix<f64>,
    penalties: &PenaltyConfig,
    grams: &BasisGrams,
) -> Result<f64> {
    let nf = q.len() as f64;
    let mut value = -log_likelihood(q, x)
        + nf / 8.0 * penalties.kappa_mu * (&grams.roughness * mean_coef).dot(mean_coef);
    for k in 0..fpc_coef.nrows() {
        let theta_k = fpc_coef.row(k).transpose();
        value += nf / 8.0 * penalties.kappa_theta * (&grams.roughness * &theta_k).dot(&theta_k);
        if penalties.lambda > 0.0 {
            value += nf
                * penalty::fscad_penalty_value(
                    &theta_k,
                    penalties.lambda,
                    penalties.scad_a,
                    grams,
                )?;
        }
    }
    Ok(value)
}

/// Mean update: solves `(B'B + N kappa_mu V) mu = B' ztilde`.
pub fn update_mean(
    design: &DesignCache,
    ztilde: &DVector<f64>,
    kappa_mu: f64,
    roughness: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if ztilde.len() != design.num_obs() {
        return Err(Error::DimensionMismatch(format!(
            "working responses have length {}, design has {} rows",
            ztilde.len(),
            design.num_obs()
        )));
    }
    let nf = design.num_obs() as f64;
    let system = design.total_gram() + roughness * (nf * kappa_mu);
    let rhs = design.rows().transpose() * ztilde;
    let chol = system.cholesky().ok_or_else(|| {
        Error::singular(
            "mean-update system is singular; use kappa_mu > 0 or a richer design".to_string(),
        )
    })?;
    Ok(chol.solve(&rhs))
}

/// Score update for one subject: the one-dimensional least-squares
/// projection of the subject's partial residuals onto `B_ij' theta_k`.
pub fn update_score(
    zbar_i: &DVector<f64>,
    basis_rows_i: &DMatrix<f64>,
    theta_k: &DVector<f64>,
) -> f64 {
    let u = basis_rows_i * theta_k;
    let den = u.dot(&u);
    if den < SCORE_DENOM_FLOOR {
        0.0
    } else {
        u.dot(zbar_i) / den
    }
}

/// Options of the eigenfunction-coefficient sub-iteration.
#[derive(Debug, Clone, Copy)]
pub struct SubIterOpts {
    pub max_sub_iter: usize,
    pub tol_sub: f64,
    pub shrink_threshold: f64,
    pub zero_boundary: bool,
}

impl From<&FitConfig> for SubIterOpts {
    fn from(config: &FitConfig) -> Self {
        Self {
            max_sub_iter: config.max_sub_iter,
            tol_sub: config.tol_sub,
            shrink_threshold: config.shrink_threshold,
            zero_boundary: config.zero_boundary,
        }
    }
}

/// Eigenfunction-coefficient update for one component. Boundary
/// coefficients are pinned to zero at the start; while the sparseness
/// penalty is active, the weight matrix is re-majorized after every ridge
/// solve and small coefficients are shrunk to exact zero and removed from
/// the active set for the rest of the sub-iteration.
#[allow(clippy::too_many_arguments)]
pub fn update_theta_subiter(
    design: &DesignCache,
    zbar: &DVector<f64>,
    scores_k: &DVector<f64>,
    kappa_theta: f64,
    lambda: f64,
    scad_a: f64,
    grams: &BasisGrams,
    theta_init: &DVector<f64>,
    opts: &SubIterOpts,
) -> Result<DVector<f64>> {
    theta_subiter_impl(
        design,
        zbar,
        scores_k,
        kappa_theta,
        lambda,
        scad_a,
        grams,
        theta_init,
        opts,
    )
    .map(|(theta, _)| theta)
}

#[allow(clippy::too_many_arguments)]
fn theta_subiter_impl(
    design: &DesignCache,
    zbar: &DVector<f64>,
    scores_k: &DVector<f64>,
    kappa_theta: f64,
    lambda: f64,
    scad_a: f64,
    grams: &BasisGrams,
    theta_init: &DVector<f64>,
    opts: &SubIterOpts,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let l = design.num_basis();
    let n = design.num_subjects();
    if zbar.len() != design.num_obs() || scores_k.len() != n || theta_init.len() != l {
        return Err(Error::DimensionMismatch(
            "theta update inputs do not match the design".to_string(),
        ));
    }
    let bz = residual_basis_sums(design, zbar);
    let (utu, utz) = pooled_cross_products(design, scores_k, &bz);
    theta_subiter_core(
        &utu,
        &utz,
        design.num_obs() as f64,
        kappa_theta,
        lambda,
        scad_a,
        grams,
        theta_init,
        opts,
    )
}

/// Per-subject residual-weighted basis sums `sum_j B_ij zbar_ij`, `n x L`.
/// Fixed for a whole joint score/coefficient loop.
fn residual_basis_sums(design: &DesignCache, zbar: &DVector<f64>) -> DMatrix<f64> {
    let mut bz = DMatrix::zeros(design.num_subjects(), design.num_basis());
    let rows = design.rows();
    for i in 0..design.num_subjects() {
        for r in design.subject_range(i) {
            let zr = zbar[r];
            for c in design.row_window(r) {
                bz[(i, c)] += rows[(r, c)] * zr;
            }
        }
    }
    bz
}

/// `U'U = sum_i xi_i^2 G_i` and `U'zbar = sum_i xi_i bz_i`.
fn pooled_cross_products(
    design: &DesignCache,
    scores_k: &DVector<f64>,
    bz: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let l = design.num_basis();
    let mut utu = DMatrix::zeros(l, l);
    let mut utz = DVector::zeros(l);
    for i in 0..design.num_subjects() {
        let s = scores_k[i];
        if s == 0.0 {
            continue;
        }
        let s2 = s * s;
        let gram = design.subject_gram(i);
        for c in 0..l {
            for r in 0..l {
                utu[(r, c)] += s2 * gram[(r, c)];
            }
            utz[c] += s * bz[(i, c)];
        }
    }
    (utu, utz)
}

#[allow(clippy::too_many_arguments)]
fn theta_subiter_core(
    utu: &DMatrix<f64>,
    utz: &DVector<f64>,
    nf: f64,
    kappa_theta: f64,
    lambda: f64,
    scad_a: f64,
    grams: &BasisGrams,
    theta_init: &DVector<f64>,
    opts: &SubIterOpts,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let l = theta_init.len();
    let mut active = vec![true; l];
    if opts.zero_boundary && l >= 2 {
        active[0] = false;
        active[l - 1] = false;
    }
    let mut theta = theta_init.clone();
    for (idx, keep) in active.iter().enumerate() {
        if !keep {
            theta[idx] = 0.0;
        }
    }

    // With the sparseness penalty off the ridge system is fixed, so a single
    // solve is exact and the shrink rule stays out of the way.
    if lambda == 0.0 {
        let system = utu + &grams.roughness * (nf * kappa_theta);
        let theta_new = solve_on_active(&system, utz, &active)?;
        return Ok((theta_new, DMatrix::zeros(l, l)));
    }

    let mut weight = DMatrix::zeros(l, l);
    for _ in 0..opts.max_sub_iter {
        if active.iter().all(|&a| !a) {
            break;
        }
        weight = penalty::lqa_weight_matrix(&theta, lambda, scad_a, grams)?;
        let system = utu + &grams.roughness * (nf * kappa_theta) + &weight * nf;
        let mut theta_new = solve_on_active(&system, utz, &active)?;
        for idx in 0..l {
            if active[idx] && theta_new[idx].abs() < opts.shrink_threshold {
                theta_new[idx] = 0.0;
                active[idx] = false;
            }
        }
        let delta = (&theta_new - &theta).amax();
        theta = theta_new;
        if delta < opts.tol_sub {
            break;
        }
    }
    Ok((theta, weight))
}

/// Solves `system * theta = rhs` restricted to the active coordinates;
/// inactive coordinates stay at zero.
fn solve_on_active(
    system: &DMatrix<f64>,
    rhs: &DVector<f64>,
    active: &[bool],
) -> Result<DVector<f64>> {
    let l = active.len();
    let idx: Vec<usize> = (0..l).filter(|&i| active[i]).collect();
    let mut theta = DVector::zeros(l);
    if idx.is_empty() {
        return Ok(theta);
    }
    let m = DMatrix::from_fn(idx.len(), idx.len(), |r, c| system[(idx[r], idx[c])]);
    let b = DVector::from_fn(idx.len(), |r, _| rhs[idx[r]]);
    let chol = m.cholesky().ok_or_else(|| {
        Error::singular(
            "coefficient system is singular on the active set; increase kappa_theta or the shrink threshold"
                .to_string(),
        )
    })?;
    let solution = chol.solve(&b);
    for (slot, &i) in idx.iter().enumerate() {
        theta[i] = solution[slot];
    }
    Ok(theta)
}

/// Degrees of freedom of one component: the trace of the ridge hat matrix
/// over the non-zero coefficients,
/// `tr[U_A (U_A'U_A + N kappa_theta V_A)^{-1} U_A']`.
pub fn fpc_df(
    design: &DesignCache,
    scores_k: &DVector<f64>,
    theta_k: &DVector<f64>,
    kappa_theta: f64,
    roughness: &DMatrix<f64>,
) -> Result<f64> {
    let l = design.num_basis();
    let idx: Vec<usize> = (0..l).filter(|&i| theta_k[i] != 0.0).collect();
    if idx.is_empty() {
        return Ok(0.0);
    }
    let nf = design.num_obs() as f64;
    let mut utu = DMatrix::zeros(l, l);
    for i in 0..design.num_subjects() {
        let s = scores_k[i];
        if s == 0.0 {
            continue;
        }
        let s2 = s * s;
        let gram = design.subject_gram(i);
        for c in 0..l {
            for r in 0..l {
                utu[(r, c)] += s2 * gram[(r, c)];
            }
        }
    }
    let utu_a = DMatrix::from_fn(idx.len(), idx.len(), |r, c| utu[(idx[r], idx[c])]);
    let v_a = DMatrix::from_fn(idx.len(), idx.len(), |r, c| roughness[(idx[r], idx[c])]);
    let system = &utu_a + v_a * (nf * kappa_theta);
    let chol = system.cholesky().ok_or_else(|| {
        Error::singular("degrees-of-freedom system is singular; increase kappa_theta".to_string())
    })?;
    Ok(chol.solve(&utu_a).trace())
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let mut diff = 0.0_f64;
    let mut scale = 0.0_f64;
    for (a, b) in new.iter().zip(old.iter()) {
        diff = diff.max((a - b).abs());
        scale = scale.max(b.abs());
    }
    diff / (1.0 + scale)
}

/// Runs the full alternating MM algorithm from the supplied initial values.
/// Deterministic given the data, configuration, and initialization.
pub fn fit(
    data: &BinaryFunctionalDataset,
    basis: &BSplineBasis,
    config: &FitConfig,
    init: &SlfpcaModel,
) -> Result<(SlfpcaModel, FitReport)> {
    config.validate()?;
    let l = basis.num_basis();
    let n = data.num_subjects();
    let p = config.num_fpcs;
    if init.mean_coef.len() != l
        || init.fpc_coef.nrows() != p
        || init.fpc_coef.ncols() != l
        || init.scores.nrows() != n
        || init.scores.ncols() != p
    {
        return Err(Error::DimensionMismatch(
            "initial values do not match the data, basis, and component count".to_string(),
        ));
    }
    let design = DesignCache::new(data, basis)?;
    let grams = basis.grams();
    let q = data.signed_outcomes();
    let n_total = design.num_obs();
    let pen = &config.penalties;
    let nf = n_total as f64;
    let mut opts = SubIterOpts::from(config);
    opts.zero_boundary = config.zero_boundary && pen.lambda > 0.0;

    let row_subject: Vec<usize> = (0..n)
        .flat_map(|i| std::iter::repeat_n(i, design.subject_range(i).len()))
        .collect();

    let mut mu = init.mean_coef.clone();
    let mut theta = init.fpc_coef.clone();
    let mut scores = init.scores.clone();

    let mut bmu = design.mult_coef(&mu);
    let mut btheta = DMatrix::zeros(n_total, p);
    for k in 0..p {
        btheta.set_column(k, &design.mult_coef(&theta.row(k).transpose()));
    }

    let compute_x = |bmu: &DVector<f64>, btheta: &DMatrix<f64>, scores: &DMatrix<f64>| {
        DVector::from_fn(n_total, |r, _| {
            let i = row_subject[r];
            let mut v = bmu[r];
            for k in 0..p {
                v += scores[(i, k)] * btheta[(r, k)];
            }
            v
        })
    };

    let mut objective_trace = Vec::new();
    let mut pnll_trace = Vec::new();
    let mut fpc_converged = vec![false; p];
    let mut converged = false;
    let mut iterations = 0;
    let mut frozen_weights: Vec<DMatrix<f64>> = vec![DMatrix::zeros(l, l); p];

    while iterations < config.max_outer_iter {
        iterations += 1;
        let mu_prev = mu.clone();
        let theta_prev = theta.clone();

        // Re-majorize: refresh the working responses at the current model.
        let mut x = compute_x(&bmu, &btheta, &scores);
        let z = DVector::from_fn(n_total, |r, _| working_response(x[r], q[r]));

        // Mean block.
        let ztilde = &z - (&x - &bmu);
        mu = update_mean(&design, &ztilde, pen.kappa_mu, &grams.roughness)?;
        let bmu_new = design.mult_coef(&mu);
        x += &bmu_new - &bmu;
        bmu = bmu_new;

        // Sequential component blocks.
        for k in 0..p {
            let mut zbar = &z - &x;
            for r in 0..n_total {
                zbar[r] += scores[(row_subject[r], k)] * btheta[(r, k)];
            }
            // The partial residuals are fixed for the whole joint loop.
            let bz = residual_basis_sums(&design, &zbar);

            let mut joint_converged = false;
            for _ in 0..config.max_joint_iter {
                // Scores given the current coefficients.
                let mut max_score_change = 0.0_f64;
                let mut score_scale = 0.0_f64;
                for i in 0..n {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for r in design.subject_range(i) {
                        let u = btheta[(r, k)];
                        num += u * zbar[r];
                        den += u * u;
                    }
                    let new = if den < SCORE_DENOM_FLOOR {
                        0.0
                    } else {
                        num / den
                    };
                    max_score_change = max_score_change.max((new - scores[(i, k)]).abs());
                    score_scale = score_scale.max(scores[(i, k)].abs());
                    scores[(i, k)] = new;
                }

                // Coefficients given the current scores.
                let scores_k = scores.column(k).into_owned();
                let theta_old = theta.row(k).transpose();
                let (utu, utz) = pooled_cross_products(&design, &scores_k, &bz);
                let (theta_new, weight) = theta_subiter_core(
                    &utu,
                    &utz,
                    nf,
                    pen.kappa_theta,
                    pen.lambda,
                    pen.scad_a,
                    &grams,
                    &theta_old,
                    &opts,
                )?;
                frozen_weights[k] = weight;
                let theta_change = rel_change(theta_new.as_slice(), theta_old.as_slice());
                theta.set_row(k, &theta_new.transpose());
                btheta.set_column(k, &design.mult_coef(&theta_new));

                let score_change = max_score_change / (1.0 + score_scale);
                if score_change < config.tol_outer && theta_change < config.tol_outer {
                    joint_converged = true;
                    break;
                }
            }
            fpc_converged[k] = joint_converged;

            for r in 0..n_total {
                x[r] = z[r] - zbar[r] + scores[(row_subject[r], k)] * btheta[(r, k)];
            }
        }

        // Working surrogate at the iteration's end (weights frozen at the
        // values the last coefficient solves used).
        let mut surrogate = (&z - &x).norm_squared()
            + nf * pen.kappa_mu * (&grams.roughness * &mu).dot(&mu);
        for k in 0..p {
            let theta_k = theta.row(k).transpose();
            surrogate += nf * pen.kappa_theta * (&grams.roughness * &theta_k).dot(&theta_k)
                + nf * (&frozen_weights[k] * &theta_k).dot(&theta_k);
        }
        objective_trace.push(surrogate);
        pnll_trace.push(penalized_nll(&q, &x, &mu, &theta, pen, &grams)?);

        // Convergence is judged on the coefficient blocks. Score estimates
        // of separated subjects keep creeping outward (their unpenalized
        // optimum is infinite), so they stay out of the stopping rule.
        let change = rel_change(mu.as_slice(), mu_prev.as_slice())
            .max(rel_change(theta.as_slice(), theta_prev.as_slice()));
        if change < config.tol_outer {
            converged = true;
            break;
        }
    }

    // Normalize each eigenfunction to unit L2 norm and rescale its scores.
    for k in 0..p {
        let theta_k = theta.row(k).transpose();
        let norm = (&grams.mass * &theta_k).dot(&theta_k).max(0.0).sqrt();
        if norm > DEAD_COMPONENT_NORM {
            theta.set_row(k, &(theta.row(k) / norm));
            for i in 0..n {
                scores[(i, k)] *= norm;
            }
        }
    }

    let mut df = Vec::with_capacity(p);
    for k in 0..p {
        df.push(fpc_df(
            &design,
            &scores.column(k).into_owned(),
            &theta.row(k).transpose(),
            pen.kappa_theta,
            &grams.roughness,
        )?);
    }

    let model = SlfpcaModel {
        basis: basis.clone(),
        mean_coef: mu,
        fpc_coef: theta,
        scores,
        normalized: true,
    };
    let x_final = predict_linear(&design, &model.mean_coef, &model.fpc_coef, &model.scores);
    let final_pnll = penalized_nll(
        &q,
        &x_final,
        &model.mean_coef,
        &model.fpc_coef,
        pen,
        &grams,
    )?;
    let report = FitReport {
        objective_trace,
        penalized_nll_trace: pnll_trace,
        penalized_nll: final_pnll,
        converged,
        fpc_converged,
        outer_iterations: iterations,
        df,
    };
    Ok((model, report))
}

/// Estimates only the scores, holding the mean and eigenfunction
/// coefficients fixed. Used to study score consistency as the per-subject
/// observation count grows.
pub fn fit_scores_only(
    data: &BinaryFunctionalDataset,
    basis: &BSplineBasis,
    mean_coef: &DVector<f64>,
    fpc_coef: &DMatrix<f64>,
    config: &FitConfig,
) -> Result<DMatrix<f64>> {
    let design = DesignCache::new(data, basis)?;
    let q = data.signed_outcomes();
    let n = data.num_subjects();
    let p = fpc_coef.nrows();
    let n_total = design.num_obs();
    let row_subject: Vec<usize> = (0..n)
        .flat_map(|i| std::iter::repeat_n(i, design.subject_range(i).len()))
        .collect();

    let bmu = design.rows() * mean_coef;
    let mut btheta = DMatrix::zeros(n_total, p);
    for k in 0..p {
        btheta.set_column(k, &(design.rows() * fpc_coef.row(k).transpose()));
    }
    let mut scores: DMatrix<f64> = DMatrix::zeros(n, p);

    for _ in 0..config.max_outer_iter {
        let x = DVector::from_fn(n_total, |r, _| {
            let i = row_subject[r];
            let mut v = bmu[r];
            for k in 0..p {
                v += scores[(i, k)] * btheta[(r, k)];
            }
            v
        });
        let z = DVector::from_fn(n_total, |r, _| working_response(x[r], q[r]));

        let mut change = 0.0_f64;
        let mut scale = 0.0_f64;
        for k in 0..p {
            for i in 0..n {
                let mut num = 0.0;
                let mut den = 0.0;
                for r in design.subject_range(i) {
                    let u = btheta[(r, k)];
                    // Partial residual with every other component held fixed.
                    let mut others = bmu[r];
                    for kk in 0..p {
                        if kk != k {
                            others += scores[(i, kk)] * btheta[(r, kk)];
                        }
                    }
                    let zbar = z[r] - others;
                    num += u * zbar;
                    den += u * u;
                }
                let new = if den < SCORE_DENOM_FLOOR {
                    0.0
                } else {
                    num / den
                };
                change = change.max((new - scores[(i, k)]).abs());
                scale = scale.max(scores[(i, k)].abs());
                scores[(i, k)] = new;
            }
        }
        if change / (1.0 + scale) < config.tol_outer {
            break;
        }
    }
    Ok(scores)
}
