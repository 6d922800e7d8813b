//! Penalty-path construction and K-fold cross-validation.
//!
//! `lambda_max` computes the smallest penalty at which the Lasso solution
//! has all slopes zero, evaluated at the constant propensity `avg(T)`; the
//! grid descends from there in powers of `2^{-1/m}`. Cross-validation scores
//! each `lambda` by the *unpenalized* loss on held-out folds, fitting each
//! training complement down the path with warm starts. Fold assignment is a
//! pure function of `(n, K, seed)` (ChaCha12-shuffled indices dealt round
//! robin), so results are bit-reproducible.

// indexed loops over parallel arrays are the clearer idiom here
#![allow(clippy::needless_range_loop)]

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::loss::{loss_psi1, loss_value_on_rows, LossKind};
use crate::solver::{fit_lasso_path, FitResult, SolverConfig};
use crate::util::mean;

/// Descending penalty grid `lambda_0 * 2^{-j/m}` for `j = 0..=depth`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub lambda0: f64,
    pub ratios: Vec<f64>,
    pub values: Vec<f64>,
    pub subdiv: u32,
    pub depth: u32,
}

impl LambdaGrid {
    /// `subdiv` is the per-octave subdivision `m`; `depth` is the largest
    /// exponent `j`, so the grid has `depth + 1` points spanning
    /// `lambda0 * 2^{-depth/subdiv}` to `lambda0`.
    pub fn new(lambda0: f64, subdiv: u32, depth: u32) -> Result<Self> {
        if !lambda0.is_finite() || lambda0 <= 0.0 {
            return Err(Error::Domain(format!(
                "lambda0 = {lambda0} must be positive and finite"
            )));
        }
        if subdiv == 0 {
            return Err(Error::InvalidConfig("grid subdivision must be positive".into()));
        }
        let ratios: Vec<f64> = (0..=depth)
            .map(|j| (2.0_f64).powf(-(j as f64) / subdiv as f64))
            .collect();
        let values = ratios.iter().map(|r| lambda0 * r).collect();
        Ok(Self { lambda0, ratios, values, subdiv, depth })
    }
}

/// Cross-validation outcome: the mean held-out loss per grid point and the
/// selected penalty (ties broken toward the larger, sparser `lambda`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: LambdaGrid,
    /// Mean validation loss per `lambda`; `+inf` where any fold failed.
    pub cv_values: Vec<f64>,
    pub selected_lambda: f64,
    pub selected_index: usize,
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
    /// Per-`lambda` count of folds whose fit did not converge.
    pub fold_failures: Vec<usize>,
}

/// Smallest penalty with an all-zero-slope solution:
/// the max over columns of the constant-fit residual correlation.
pub fn lambda_max(kind: LossKind, design: &DesignMatrix, treatment: &[f64]) -> Result<f64> {
    if treatment.len() != design.n() {
        return Err(Error::DimensionMismatch(format!(
            "treatment length {} != design rows {}",
            treatment.len(),
            design.n()
        )));
    }
    let tbar = mean(treatment);
    if !(tbar > 0.0 && tbar < 1.0) {
        return Err(Error::DegenerateTreatment);
    }
    // linear predictor of the zero-slope solution: logit(tbar), at which the
    // per-observation residual is the negated gradient factor
    let g0 = (tbar / (1.0 - tbar)).ln();
    let n = design.n();
    let mut best = 0.0_f64;
    for j in 1..design.values().ncols() {
        let mut acc = 0.0;
        for i in 0..n {
            acc += -loss_psi1(kind, treatment[i], g0) * design.values()[[i, j]];
        }
        best = best.max((acc / n as f64).abs());
    }
    Ok(best)
}

/// Deterministic fold ids: a seeded shuffle of `0..n` dealt round robin into
/// `k` near-equal folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut fold = vec![0usize; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

fn fold_cv_losses(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    grid: &LambdaGrid,
    folds: &[usize],
    fold_id: usize,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let train_rows: Vec<usize> =
        (0..design.n()).filter(|i| folds[*i] != fold_id).collect();
    let val_rows: Vec<usize> = (0..design.n()).filter(|i| folds[*i] == fold_id).collect();
    let train_design = design.select_rows(&train_rows);
    let train_t: Vec<f64> = train_rows.iter().map(|&i| treatment[i]).collect();

    let fits = match fit_lasso_path(kind, &train_design, &train_t, &grid.values, config) {
        Ok(f) => f,
        // a degenerate training arm fails every lambda in this fold
        Err(Error::DegenerateTreatment) => {
            return Ok(vec![f64::INFINITY; grid.values.len()]);
        }
        Err(e) => return Err(e),
    };
    let mut out = Vec::with_capacity(fits.len());
    for fit in &fits {
        if !fit.status.is_converged() {
            out.push(f64::INFINITY);
            continue;
        }
        let v = loss_value_on_rows(kind, design, treatment, &fit.coef, &val_rows)?;
        out.push(if v.is_finite() { v } else { f64::INFINITY });
    }
    Ok(out)
}

/// K-fold cross-validation over a penalty grid.
pub fn cross_validate(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    grid: &LambdaGrid,
    k_folds: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<CvResult> {
    let n = design.n();
    if k_folds < 2 || k_folds > n {
        return Err(Error::InvalidConfig(format!(
            "fold count {k_folds} must lie in 2..=n ({n})"
        )));
    }
    if grid.values.is_empty() {
        return Err(Error::InvalidConfig("empty lambda grid".into()));
    }
    let folds = fold_assignment(n, k_folds, seed);

    let per_fold: Vec<Vec<f64>> = run_folds(kind, design, treatment, grid, &folds, k_folds, config)?;

    let m = grid.values.len();
    let mut cv_values = vec![0.0; m];
    let mut fold_failures = vec![0usize; m];
    for j in 0..m {
        let mut acc = 0.0;
        for fold in &per_fold {
            if !fold[j].is_finite() {
                fold_failures[j] += 1;
            }
            acc += fold[j];
        }
        cv_values[j] = acc / k_folds as f64;
    }

    // grid descends, so scanning in order with a strict comparison breaks
    // ties toward the larger lambda
    let mut selected_index = None;
    for (j, &v) in cv_values.iter().enumerate() {
        if v.is_finite() && selected_index.is_none_or(|b: usize| v < cv_values[b]) {
            selected_index = Some(j);
        }
    }
    let selected_index = selected_index.ok_or(Error::NoViableLambda)?;

    Ok(CvResult {
        grid: grid.clone(),
        cv_values,
        selected_lambda: grid.values[selected_index],
        selected_index,
        fold_assignment: folds,
        seed,
        fold_failures,
    })
}

#[cfg(feature = "parallel")]
fn run_folds(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    grid: &LambdaGrid,
    folds: &[usize],
    k_folds: usize,
    config: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    (0..k_folds)
        .into_par_iter()
        .map(|fold_id| fold_cv_losses(kind, design, treatment, grid, folds, fold_id, config))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_folds(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    grid: &LambdaGrid,
    folds: &[usize],
    k_folds: usize,
    config: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    (0..k_folds)
        .map(|fold_id| fold_cv_losses(kind, design, treatment, grid, folds, fold_id, config))
        .collect()
}

/// Cross-validates, then fits the full data down the path to the selected
/// penalty (warm-started) and returns that final fit.
pub fn cv_fit(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    grid: &LambdaGrid,
    k_folds: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<(CvResult, FitResult)> {
    let cv = cross_validate(kind, design, treatment, grid, k_folds, seed, config)?;
    let path = &grid.values[..=cv.selected_index];
    let mut fits = fit_lasso_path(kind, design, treatment, path, config)?;
    let fit = fits.pop().expect("path is nonempty");
    Ok((cv, fit))
}

/// Convenience: grid from the data, then [`cv_fit`].
#[allow(clippy::too_many_arguments)]
pub fn cv_fit_default_grid(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    subdiv: u32,
    depth: u32,
    k_folds: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<(CvResult, FitResult)> {
    let lambda0 = lambda_max(kind, design, treatment)?;
    let grid = LambdaGrid::new(lambda0, subdiv, depth)?;
    cv_fit(kind, design, treatment, &grid, k_folds, seed, config)
}

/// Warm-started full path plus the coefficients it visits; used by the
/// diagnostics command to trace balance against sparsity.
pub fn path_fits(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    grid: &LambdaGrid,
    config: &SolverConfig,
) -> Result<Vec<FitResult>> {
    fit_lasso_path(kind, design, treatment, &grid.values, config)
}
