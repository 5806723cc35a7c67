// Indexed loops are clearer than iterator chains in most of this numerical
// code.
#![allow(clippy::needless_range_loop)]

//! Sparse logistic functional principal component analysis (SLFPCA) for
//! binary-valued functional data.
//!
//! Observations are irregular binary measurements `y_ij` on a latent smooth
//! process; the latent canonical-parameter trajectories are expanded in a
//! B-spline basis and estimated by minimizing a penalized Bernoulli negative
//! log-likelihood with a roughness penalty on all functions and a functional
//! SCAD (fSCAD) sparseness penalty on the eigenfunctions. Optimization uses a
//! majorization-minimization scheme with closed-form alternating updates;
//! tuning parameters are selected by GCV (mean smoothing) and a BIC-type
//! criterion (eigenfunction smoothing and sparsity).
//!
//! The crate exposes the full pipeline as a library (see `examples/` for one
//! runnable program per capability) plus a thin `slfpca` binary with
//! `simulate`, `fit`, `tune`, `mc`, and `metrics` subcommands.

pub mod bspline;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod init;
pub mod penalty;
pub mod simulation;
pub mod solver;
pub mod tuning;

pub use bspline::{BSplineBasis, BasisGrams, BasisSpec};
pub use dataset::{BinaryFunctionalDataset, DesignCache, Subject};
pub use error::{Error, Result};
pub use penalty::PenaltyConfig;
pub use solver::{FitConfig, FitReport, SlfpcaModel};
