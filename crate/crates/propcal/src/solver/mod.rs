//! Coefficient fitting: damped Newton minimization with separation detection
//! for the unpenalized losses, and a Fisher scoring descent for the
//! Lasso-penalized losses.
//!
//! The penalized algorithm repeatedly minimizes a penalized quadratic
//! surrogate of the loss and backtracks along the segment to the surrogate
//! minimizer whenever the penalized objective fails to decrease (the
//! surrogate minimizer is always a descent direction, so the line search
//! terminates). Two surrogates are available:
//!
//! * `Q2` — Fisher scoring: per-observation curvature replaced by its
//!   conditional expectation under the model, giving the working response
//!   `g + (T - pi)/(pi(1-pi))` with weights `1 - pi` for the treated-arm
//!   calibration loss (and the classical IRLS weights for ML);
//! * `Q3` (default) — the curvature is further bounded by a constant, so the
//!   weighted Gram matrix is fixed across iterations and the inner solver's
//!   QR factors survive from one iteration to the next. For the treated-arm
//!   calibration loss the working response is `g + T/pi - 1` with unit
//!   weights.
//!
//! The inner problems are solved exactly by the active-set method behind
//! [`solve_wls_lasso`], warm-started from the current support.

// indexed loops over parallel arrays are the clearer idiom here
#![allow(clippy::needless_range_loop)]

mod wls;

pub use wls::solve_wls_lasso;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::{linear_predictor, propensity, Coefficients, DesignMatrix};
use crate::error::{Error, Result};
use crate::loss::{
    eval_loss, fisher_weight, gram_weight, loss_psi1, loss_value_from_g, LossKind,
};
use crate::util::mean;

/// Surrogate used in the penalized descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Surrogate {
    /// Fisher-scoring quadratic (weights vary per iteration).
    Q2,
    /// Constant-curvature bound (weights fixed; QR factors cached).
    Q3,
}

/// Solver options. Defaults follow the crate-wide tolerances: outer
/// convergence is declared when the Karush-Kuhn-Tucker residuals pass at
/// `kkt_tol`, inner problems are solved to 1e-12 so that surrogate error
/// dominates inner error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Relative penalized-loss decrease below which progress counts as
    /// stalled (a persistent stall without a KKT pass ends in
    /// `IterationLimit`).
    pub outer_tol: f64,
    /// Absolute KKT tolerance for convergence and reporting.
    pub kkt_tol: f64,
    pub surrogate: Surrogate,
    /// Line-search shrink factor in (0, 1).
    pub backtrack_shrink: f64,
    /// Smallest admissible line-search step.
    pub backtrack_min_step: f64,
    /// Bound on `max_i |g_i|` beyond which a decreasing loss is declared
    /// separated: past this point `exp(-|g|)` is below ~1e-13 and the
    /// calibration losses are numerically affine.
    pub predictor_cap: f64,
    /// Cap on active-set changes per inner solve.
    pub inner_max_active_updates: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 1000,
            outer_tol: 1e-9,
            kkt_tol: 1e-8,
            surrogate: Surrogate::Q3,
            backtrack_shrink: 0.5,
            backtrack_min_step: (2.0_f64).powi(-30),
            predictor_cap: 30.0,
            inner_max_active_updates: 100_000,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0
            || self.outer_tol <= 0.0
            || self.kkt_tol <= 0.0
            || self.backtrack_min_step <= 0.0
            || self.predictor_cap <= 0.0
            || self.inner_max_active_updates == 0
        {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return Err(Error::InvalidConfig("backtrack_shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Why a fit stopped without converging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonConvergenceReason {
    /// The loss kept decreasing while predictors grew past the cap: the
    /// empirical witness that the loss has no finite minimizer.
    Separation,
    IterationLimit,
    LineSearchStall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    NonConvergence(NonConvergenceReason),
}

impl FitStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, FitStatus::Converged)
    }
}

/// First-order optimality report. Residuals are the negated loss gradient,
/// oriented so that for the treated-arm calibration loss the intercept
/// residual is `avg[T/pi] - 1` and the box residual for column `j` is
/// `avg[(T/pi) f_j] - avg[f_j]`; the Lasso conditions then read
/// `|box_j| <= lambda` with equality on the active set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktReport {
    /// Residual at the unpenalized coordinate(s); the largest in magnitude
    /// when more than one coordinate is unpenalized.
    pub intercept_residual: f64,
    /// Residuals of the penalized coordinates, in column order.
    pub box_residuals: Vec<f64>,
    /// Design-column indices of the penalized coordinates.
    pub penalized_cols: Vec<usize>,
    /// Penalized coordinates with nonzero estimates.
    pub active_set: Vec<usize>,
    pub max_abs_box: f64,
}

impl KktReport {
    /// Bound checks plus active-set equality, all at `tol`.
    pub fn passes(&self, lambda: f64, tol: f64) -> bool {
        self.intercept_residual.abs() <= tol
            && self.max_abs_box <= lambda + tol
            && self.active_equality_gap(lambda) <= tol
    }

    /// Largest deviation of an active coordinate's `|box residual|` from
    /// `lambda` (zero when the active set is empty).
    pub fn active_equality_gap(&self, lambda: f64) -> f64 {
        self.active_set
            .iter()
            .filter_map(|col| {
                self.penalized_cols
                    .iter()
                    .position(|c| c == col)
                    .map(|pos| (self.box_residuals[pos].abs() - lambda).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// A completed fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub coef: Coefficients,
    /// Fitted propensities, exactly `propensity(linear_predictor(...))`.
    pub pi_hat: Array1<f64>,
    /// Unpenalized loss at the final coefficients.
    pub loss: f64,
    /// Loss plus `lambda * |gamma|_1` over penalized coordinates.
    pub penalized_loss: f64,
    pub lambda: f64,
    pub status: FitStatus,
    pub kkt: KktReport,
    pub iterations: usize,
    /// Some linear predictor exceeded the exponent cap during fitting.
    pub overflow: bool,
    /// The inner solver fell back to a ridge-jittered Gram solve.
    pub ridge_jittered: bool,
    /// Penalized objective after every accepted step (strictly decreasing).
    pub penalized_path: Vec<f64>,
}

fn check_arms(treatment: &[f64]) -> Result<f64> {
    let tbar = mean(treatment);
    if !(tbar > 0.0 && tbar < 1.0) {
        return Err(Error::DegenerateTreatment);
    }
    Ok(tbar)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// First-order residual report at arbitrary coefficients; purely diagnostic,
/// no optimality is implied away from a minimizer.
pub fn check_kkt(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    coef: &Coefficients,
    _lambda: f64,
) -> Result<KktReport> {
    let eval = eval_loss(kind, design, treatment, coef)?;
    Ok(kkt_from_gradient(&eval.gradient, coef))
}

fn kkt_from_gradient(gradient: &Array1<f64>, coef: &Coefficients) -> KktReport {
    let mask = coef.penalty_mask();
    let mut intercept_residual = 0.0_f64;
    let mut box_residuals = Vec::new();
    let mut penalized_cols = Vec::new();
    for j in 0..coef.len() {
        let r = -gradient[j];
        if mask[j] {
            box_residuals.push(r);
            penalized_cols.push(j);
        } else if r.abs() >= intercept_residual.abs() {
            intercept_residual = r;
        }
    }
    let max_abs_box = box_residuals.iter().fold(0.0, |m: f64, r| m.max(r.abs()));
    KktReport {
        intercept_residual,
        box_residuals,
        penalized_cols,
        active_set: coef.active_set(),
        max_abs_box,
    }
}

/// Damped Newton minimization of an unpenalized loss.
///
/// Converges when the gradient max-norm is at most `config.kkt_tol`.
/// Declares `Separation` when an accepted (loss-decreasing) step pushes
/// `max_i |g_i|` past `config.predictor_cap`, the empirical witness that the
/// non-separation condition fails and the loss has no finite minimizer.
pub fn fit_unpenalized(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    config: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    let tbar = check_arms(treatment)?;
    let k = design.values().ncols();
    let n = design.n();

    let mut gamma = Array1::zeros(k);
    gamma[0] = logit(tbar);
    let mut coef = Coefficients::new(gamma);
    let mut g = linear_predictor(design, &coef)?;
    let mut overflow = false;
    let mut status = FitStatus::NonConvergence(NonConvergenceReason::IterationLimit);
    let mut iterations = 0;
    let mut path = Vec::new();

    for _ in 0..config.max_outer_iters {
        let eval = eval_loss(kind, design, treatment, &coef)?;
        overflow |= eval.overflow;
        path.push(eval.value);
        let gmax = eval.gradient.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if gmax <= config.kkt_tol {
            status = FitStatus::Converged;
            break;
        }

        // dense Newton system (1/n) f' diag(w) f d = -grad
        let mut hess = vec![vec![0.0; k]; k];
        for i in 0..n {
            let w = eval.hessian_weights[i];
            if w == 0.0 {
                continue;
            }
            for a in 0..k {
                let fa = design.values()[[i, a]];
                if fa == 0.0 {
                    continue;
                }
                for b in a..k {
                    hess[a][b] += w * fa * design.values()[[i, b]];
                }
            }
        }
        let nf = n as f64;
        for a in 0..k {
            for b in a..k {
                hess[a][b] /= nf;
                hess[b][a] = hess[a][b];
            }
        }
        let rhs: Vec<f64> = eval.gradient.iter().map(|v| -v).collect();
        let mut jitter = 0.0;
        let dir = loop {
            if let Some(d) = wls::cholesky_solve(&hess, &rhs, jitter) {
                break d;
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
        };
        let dir = Array1::from_vec(dir);
        let fd = design.values().dot(&dir);

        let mut t = 1.0;
        let mut accepted = false;
        while t >= config.backtrack_min_step {
            let g_t: Array1<f64> = &g + &(t * &fd);
            let (val, of) = loss_value_from_g(kind, g_t.as_slice().unwrap(), treatment);
            if val < eval.value {
                overflow |= of;
                coef.gamma_mut().zip_mut_with(&dir, |c, d| *c += t * d);
                g = g_t;
                accepted = true;
                break;
            }
            t *= config.backtrack_shrink;
        }
        iterations += 1;
        if !accepted {
            // loss already at the floating-point floor; accept the full
            // Newton point only if it reaches the gradient tolerance
            let mut cand = coef.clone();
            cand.gamma_mut().zip_mut_with(&dir, |c, d| *c += d);
            let cand_eval = eval_loss(kind, design, treatment, &cand)?;
            let cand_gmax = cand_eval.gradient.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            if cand_gmax <= config.kkt_tol {
                coef = cand;
                status = FitStatus::Converged;
            } else {
                status = FitStatus::NonConvergence(NonConvergenceReason::LineSearchStall);
            }
            break;
        }
        let cap = g.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if cap > config.predictor_cap {
            status = FitStatus::NonConvergence(NonConvergenceReason::Separation);
            break;
        }
    }

    // the incrementally updated predictor can drift by rounding; recompute
    // so that pi_hat == propensity(linear_predictor(design, coef)) exactly
    let g = linear_predictor(design, &coef)?;
    let (loss, of) = loss_value_from_g(kind, g.as_slice().unwrap(), treatment);
    overflow |= of;
    let kkt = check_kkt(kind, design, treatment, &coef, 0.0)?;
    Ok(FitResult {
        pi_hat: propensity(&g),
        loss,
        penalized_loss: loss,
        lambda: 0.0,
        status,
        kkt,
        iterations,
        overflow,
        ridge_jittered: false,
        penalized_path: path,
        coef,
    })
}

/// Floor for Fisher-scoring weights; only the curvature is floored, the
/// surrogate's gradient stays exact, so descent is unaffected.
const Q2_WEIGHT_FLOOR: f64 = 1e-8;

fn surrogate_weights(
    kind: LossKind,
    surrogate: Surrogate,
    g: &Array1<f64>,
) -> Vec<f64> {
    match surrogate {
        Surrogate::Q3 => vec![gram_weight(kind); g.len()],
        Surrogate::Q2 => g
            .iter()
            .map(|&gi| fisher_weight(kind, gi).max(Q2_WEIGHT_FLOOR))
            .collect(),
    }
}

fn working_response(
    kind: LossKind,
    treatment: &[f64],
    g: &Array1<f64>,
    weights: &[f64],
) -> Vec<f64> {
    g.iter()
        .zip(treatment)
        .zip(weights)
        .map(|((&gi, &ti), &wi)| gi - loss_psi1(kind, ti, gi) / wi)
        .collect()
}

/// Lasso-penalized fit at a single `lambda` (Fisher scoring descent).
pub fn fit_lasso(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    lambda: f64,
    config: &SolverConfig,
    warm_start: Option<&Coefficients>,
) -> Result<FitResult> {
    if lambda <= 0.0 {
        return Err(Error::Domain(format!(
            "lambda = {lambda} must be positive; use fit_unpenalized for lambda = 0"
        )));
    }
    warn_if_far_from_standardized(design);
    let mut ws = None;
    fit_lasso_core(kind, design, treatment, lambda, config, warm_start, &mut ws)
}

/// Fits a descending sequence of `lambda` values with warm starts, reusing
/// the inner solver's factorization where the surrogate permits.
pub fn fit_lasso_path(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<FitResult>> {
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("lambda path must be strictly decreasing".into()));
    }
    warn_if_far_from_standardized(design);
    let mut ws = None;
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Coefficients> = None;
    for &lambda in lambdas {
        if lambda <= 0.0 {
            return Err(Error::Domain(format!("lambda = {lambda} must be positive")));
        }
        let fit =
            fit_lasso_core(kind, design, treatment, lambda, config, warm.as_ref(), &mut ws)?;
        warm = Some(fit.coef.clone());
        out.push(fit);
    }
    Ok(out)
}

fn fit_lasso_core(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    lambda: f64,
    config: &SolverConfig,
    warm_start: Option<&Coefficients>,
    ws: &mut Option<wls::WlsWorkspace>,
) -> Result<FitResult> {
    config.validate()?;
    let tbar = check_arms(treatment)?;
    let k = design.values().ncols();
    let n = design.n();

    let mut coef = match warm_start {
        Some(c) => {
            if c.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "warm start length {} != design columns {k}",
                    c.len()
                )));
            }
            c.clone()
        }
        None => {
            let mut gamma = Array1::zeros(k);
            gamma[0] = logit(tbar);
            Coefficients::new(gamma)
        }
    };
    let mask = coef.penalty_mask().to_vec();

    let mut g = linear_predictor(design, &coef)?;
    let (value0, mut overflow) = loss_value_from_g(kind, g.as_slice().unwrap(), treatment);
    let mut pen = value0 + lambda * coef.penalized_l1();
    let mut path = vec![pen];
    let mut ridge_jittered = false;
    let mut iterations = 0;
    let mut stall_count = 0;
    let mut status = FitStatus::NonConvergence(NonConvergenceReason::IterationLimit);

    // KKT may already hold at the warm start (e.g. lambda >= lambda_0)
    let mut kkt = kkt_at(kind, design, treatment, &coef, n)?;
    if kkt.passes(lambda, config.kkt_tol) {
        status = FitStatus::Converged;
    } else {
        // Algorithm step (ii1) admits either surrogate per update. Q3 keeps
        // the factorization but converges linearly with a rate set by the
        // gap between the constant bound and the true curvature; when its
        // progress stalls short of the KKT tolerance, later updates switch
        // to the adaptive Q2 quadratic to finish.
        let mut use_q2 = matches!(config.surrogate, Surrogate::Q2);
        const Q2_SWITCH_AFTER_STALLS: usize = 3;
        const STALL_LIMIT: usize = 50;
        for _ in 0..config.max_outer_iters {
            let step_surrogate = if use_q2 { Surrogate::Q2 } else { Surrogate::Q3 };
            let weights = surrogate_weights(kind, step_surrogate, &g);
            let response = working_response(kind, treatment, &g, &weights);
            let (gamma_half, ridged) = if use_q2 {
                let mut local = wls::WlsWorkspace::new(n, &weights)?;
                wls::solve_in_workspace(
                    &mut local,
                    design,
                    &response,
                    lambda,
                    &mask,
                    coef.gamma(),
                    config.inner_max_active_updates,
                )?
            } else {
                if ws.is_none() {
                    *ws = Some(wls::WlsWorkspace::new(n, &weights)?);
                }
                wls::solve_in_workspace(
                    ws.as_mut().unwrap(),
                    design,
                    &response,
                    lambda,
                    &mask,
                    coef.gamma(),
                    config.inner_max_active_updates,
                )?
            };
            ridge_jittered |= ridged;

            let step: Array1<f64> = &gamma_half - coef.gamma();
            let step_norm = step.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            if step_norm <= 1e-15 {
                // surrogate fixed point; KKT decides
                kkt = kkt_at(kind, design, treatment, &coef, n)?;
                status = if kkt.passes(lambda, config.kkt_tol) {
                    FitStatus::Converged
                } else {
                    FitStatus::NonConvergence(NonConvergenceReason::IterationLimit)
                };
                break;
            }
            let fd = design.values().dot(&step);

            let mut t = 1.0;
            let mut accepted = false;
            while t >= config.backtrack_min_step {
                let gamma_t: Array1<f64> = coef.gamma() + &(t * &step);
                let g_t: Array1<f64> = &g + &(t * &fd);
                let cand = Coefficients::with_mask(gamma_t, mask.clone())?;
                let (val_t, of) = loss_value_from_g(kind, g_t.as_slice().unwrap(), treatment);
                let pen_t = val_t + lambda * cand.penalized_l1();
                if pen_t < pen {
                    overflow |= of;
                    coef = cand;
                    g = g_t;
                    let rel = (pen - pen_t) / pen.abs().max(1.0);
                    pen = pen_t;
                    path.push(pen);
                    stall_count = if rel <= config.outer_tol { stall_count + 1 } else { 0 };
                    accepted = true;
                    break;
                }
                t *= config.backtrack_shrink;
            }
            iterations += 1;
            if !accepted {
                // objective at the floating-point floor: the full surrogate
                // step still tightens the first-order residuals, so take it
                // if and only if it actually reaches the KKT tolerance
                let cand = Coefficients::with_mask(gamma_half.clone(), mask.clone())?;
                let polish_kkt = kkt_at(kind, design, treatment, &cand, n)?;
                if polish_kkt.passes(lambda, config.kkt_tol) {
                    coef = cand;
                    kkt = polish_kkt;
                    status = FitStatus::Converged;
                } else {
                    status = FitStatus::NonConvergence(NonConvergenceReason::LineSearchStall);
                }
                break;
            }
            let cap = g.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            if cap > config.predictor_cap {
                status = FitStatus::NonConvergence(NonConvergenceReason::Separation);
                break;
            }
            kkt = kkt_at(kind, design, treatment, &coef, n)?;
            if kkt.passes(lambda, config.kkt_tol) {
                status = FitStatus::Converged;
                break;
            }
            if !use_q2 && stall_count >= Q2_SWITCH_AFTER_STALLS {
                use_q2 = true;
                stall_count = 0;
            } else if stall_count >= STALL_LIMIT {
                status = FitStatus::NonConvergence(NonConvergenceReason::IterationLimit);
                break;
            }
        }
    }

    // recompute, so pi_hat and the reported losses are exactly those of coef
    let g = linear_predictor(design, &coef)?;
    let (value, of) = loss_value_from_g(kind, g.as_slice().unwrap(), treatment);
    overflow |= of;
    let pen = value + lambda * coef.penalized_l1();
    Ok(FitResult {
        pi_hat: propensity(&g),
        loss: value,
        penalized_loss: pen,
        lambda,
        status,
        kkt,
        iterations,
        overflow,
        ridge_jittered,
        penalized_path: path,
        coef,
    })
}

fn kkt_at(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    coef: &Coefficients,
    _n: usize,
) -> Result<KktReport> {
    let eval = eval_loss(kind, design, treatment, coef)?;
    Ok(kkt_from_gradient(&eval.gradient, coef))
}

/// The penalized solver applies one `lambda` to every coordinate, which is
/// only meaningful on roughly standardized columns.
fn warn_if_far_from_standardized(design: &DesignMatrix) {
    if design.is_standardized() {
        return;
    }
    for j in 1..design.values().ncols() {
        let col: Vec<f64> = design.values().column(j).to_vec();
        let m = mean(&col);
        let sd = crate::util::sample_sd(&col);
        if m.abs() > 0.5 || !(0.25..=4.0).contains(&sd) {
            log::warn!(
                "design column '{}' is far from standardized (mean {m:.3}, sd {sd:.3}); \
                 a single lambda may penalize coordinates unevenly",
                design.column_names()[j]
            );
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DesignMatrix;
    use crate::tuning::lambda_max;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn intercept_only_design(n: usize) -> DesignMatrix {
        DesignMatrix::from_columns(vec!["z".into()], vec![vec![0.0; n]], false).unwrap()
    }

    #[test]
    fn cal1_intercept_only_balanced() {
        let design = intercept_only_design(4);
        let t = [1.0, 0.0, 1.0, 0.0];
        let fit = fit_unpenalized(LossKind::Cal1, &design, &t, &SolverConfig::default()).unwrap();
        assert!(fit.status.is_converged());
        assert!(fit.coef.gamma()[0].abs() < 1e-8);
    }

    #[test]
    fn cal1_intercept_only_three_quarters() {
        let design = intercept_only_design(4);
        let t = [1.0, 1.0, 1.0, 0.0];
        let fit = fit_unpenalized(LossKind::Cal1, &design, &t, &SolverConfig::default()).unwrap();
        assert!(fit.status.is_converged());
        assert!((fit.coef.gamma()[0] - 3.0_f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn separable_instance_detected() {
        let design =
            DesignMatrix::from_columns(vec!["x".into()], vec![vec![1.0, -1.0]], false).unwrap();
        let t = [1.0, 0.0];
        let fit = fit_unpenalized(LossKind::Cal1, &design, &t, &SolverConfig::default()).unwrap();
        assert_eq!(
            fit.status,
            FitStatus::NonConvergence(NonConvergenceReason::Separation)
        );
    }

    #[test]
    fn ml_score_equation_at_convergence() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 80;
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let design = DesignMatrix::from_columns(
            vec!["a".into(), "b".into(), "c".into()],
            cols.clone(),
            false,
        )
        .unwrap();
        let t: Vec<f64> = (0..n)
            .map(|i| {
                let g = 0.3 * cols[0][i] - 0.4 * cols[1][i];
                f64::from(rng.gen_bool(crate::data::sigmoid(g)))
            })
            .collect();
        let fit = fit_unpenalized(LossKind::Ml, &design, &t, &SolverConfig::default()).unwrap();
        assert!(fit.status.is_converged());
        // score equation avg[(T - pi) f] = 0
        for j in 0..4 {
            let mut s = 0.0;
            for i in 0..n {
                s += (t[i] - fit.pi_hat[i]) * design.values()[[i, j]];
            }
            assert!((s / n as f64).abs() <= 1e-8, "score coordinate {j}");
        }
    }

    #[test]
    fn lambda_at_threshold_gives_zero_slopes() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 60;
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let names = (0..4).map(|j| format!("x{j}")).collect();
        let design = DesignMatrix::from_columns(names, cols, true).unwrap();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.4))).collect();
        for kind in [LossKind::Ml, LossKind::Cal1, LossKind::Cal0, LossKind::Bal] {
            let lam0 = lambda_max(kind, &design, &t).unwrap();
            let fit = fit_lasso(kind, &design, &t, lam0 * (1.0 + 1e-12), &SolverConfig::default(), None)
                .unwrap();
            assert!(fit.status.is_converged(), "{kind:?} did not converge at lambda_0");
            assert!(
                fit.coef.gamma().iter().skip(1).all(|&v| v == 0.0),
                "{kind:?} slopes must be zero at lambda_0"
            );
            let tbar = t.iter().sum::<f64>() / n as f64;
            assert!((fit.coef.gamma()[0] - (tbar / (1.0 - tbar)).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn rcal_kkt_passes_on_random_instance() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 60;
        let p = 5;
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let design = DesignMatrix::from_columns(names, cols, true).unwrap();
        let t: Vec<f64> = (0..n)
            .map(|i| {
                let g = 0.5 * design.values()[[i, 1]] - 0.3 * design.values()[[i, 2]];
                f64::from(rng.gen_bool(crate::data::sigmoid(g)))
            })
            .collect();
        let lam0 = lambda_max(LossKind::Cal1, &design, &t).unwrap();
        let lambda = lam0 / 4.0;
        let fit =
            fit_lasso(LossKind::Cal1, &design, &t, lambda, &SolverConfig::default(), None).unwrap();
        assert!(fit.status.is_converged());
        assert!(fit.kkt.intercept_residual.abs() <= 1e-8);
        assert!(fit.kkt.max_abs_box <= lambda + 1e-8);
        assert!(fit.kkt.active_equality_gap(lambda) <= 1e-6);
        // avg[T / pi_hat] = 1 is the intercept condition
        let s: f64 = (0..n).map(|i| t[i] / fit.pi_hat[i]).sum::<f64>() / n as f64;
        assert!((s - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn penalized_path_is_strictly_decreasing() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let n = 50;
        let p = 6;
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let design = DesignMatrix::from_columns(names, cols, true).unwrap();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        for kind in [LossKind::Ml, LossKind::Cal1, LossKind::Bal] {
            for surrogate in [Surrogate::Q2, Surrogate::Q3] {
                let lam0 = lambda_max(kind, &design, &t).unwrap();
                let config = SolverConfig { surrogate, ..SolverConfig::default() };
                let fit = fit_lasso(kind, &design, &t, lam0 / 8.0, &config, None).unwrap();
                assert!(fit.status.is_converged(), "{kind:?}/{surrogate:?}");
                for w in fit.penalized_path.windows(2) {
                    assert!(w[1] < w[0], "{kind:?}/{surrogate:?} path not decreasing");
                }
            }
        }
    }

    #[test]
    fn q2_and_q3_agree_on_the_minimizer() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 40;
        let p = 4;
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let design = DesignMatrix::from_columns(names, cols, true).unwrap();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let lam0 = lambda_max(LossKind::Cal1, &design, &t).unwrap();
        let q2 = fit_lasso(
            LossKind::Cal1,
            &design,
            &t,
            lam0 / 4.0,
            &SolverConfig { surrogate: Surrogate::Q2, ..SolverConfig::default() },
            None,
        )
        .unwrap();
        let q3 = fit_lasso(LossKind::Cal1, &design, &t, lam0 / 4.0, &SolverConfig::default(), None)
            .unwrap();
        assert!(q2.status.is_converged() && q3.status.is_converged());
        assert!((q2.penalized_loss - q3.penalized_loss).abs() < 1e-9);
    }

    #[test]
    fn surrogate_q3_majorizes_q2_for_cal1() {
        // Gram weights 1 >= Fisher weights 1 - pi pointwise, so the Q3
        // surrogate dominates Q2 with equality at the expansion point.
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let n = 30;
        let design = DesignMatrix::from_columns(
            vec!["x".into()],
            vec![(0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()],
            false,
        )
        .unwrap();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let tilde = Coefficients::new(ndarray::array![0.3, -0.5]);
        let g_tilde = linear_predictor(&design, &tilde).unwrap();
        let (l_tilde, _) =
            loss_value_from_g(LossKind::Cal1, g_tilde.as_slice().unwrap(), &t);

        let quad = |gamma: &Array1<f64>, weights: &[f64]| -> f64 {
            // surrogate value at gamma expanded around tilde
            let mut v = l_tilde;
            for i in 0..n {
                let fi = [1.0, design.values()[[i, 1]]];
                let delta = (gamma[0] - tilde.gamma()[0]) * fi[0]
                    + (gamma[1] - tilde.gamma()[1]) * fi[1];
                let psi = loss_psi1(LossKind::Cal1, t[i], g_tilde[i]);
                v += (psi * delta + 0.5 * weights[i] * delta * delta) / n as f64;
            }
            v
        };
        for _ in 0..50 {
            let gamma = ndarray::array![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let w2: Vec<f64> =
                g_tilde.iter().map(|&gi| fisher_weight(LossKind::Cal1, gi)).collect();
            let w3 = vec![1.0; n];
            let q2 = quad(&gamma, &w2);
            let q3 = quad(&gamma, &w3);
            assert!(q3 >= q2 - 1e-12, "Q3 must majorize Q2: {q3} < {q2}");
        }
        let w2: Vec<f64> = g_tilde.iter().map(|&gi| fisher_weight(LossKind::Cal1, gi)).collect();
        let w3 = vec![1.0; n];
        assert!((quad(tilde.gamma(), &w2) - quad(tilde.gamma(), &w3)).abs() < 1e-14);
    }

    #[test]
    fn working_responses_match_fisher_scoring_forms() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let n = 40;
        let g = Array1::from_iter((0..n).map(|_| rng.gen_range(-3.0..3.0_f64)));
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();

        // Q2 for the treated-arm calibration loss: weights 1 - pi and the
        // shared scoring response g + (T - pi)/(pi (1 - pi))
        let w2 = surrogate_weights(LossKind::Cal1, Surrogate::Q2, &g);
        let r2 = working_response(LossKind::Cal1, &t, &g, &w2);
        for i in 0..n {
            let pi = crate::data::sigmoid(g[i]);
            assert!((w2[i] - (1.0 - pi)).abs() <= 1e-12);
            let expect = g[i] + (t[i] - pi) / (pi * (1.0 - pi));
            assert!((r2[i] - expect).abs() <= 1e-9 * expect.abs().max(1.0), "row {i}");
        }

        // the ML Q2 response is the same scoring response with IRLS weights
        let w2ml = surrogate_weights(LossKind::Ml, Surrogate::Q2, &g);
        let r2ml = working_response(LossKind::Ml, &t, &g, &w2ml);
        for i in 0..n {
            let pi = crate::data::sigmoid(g[i]);
            assert!((w2ml[i] - pi * (1.0 - pi)).abs() <= 1e-12);
            let expect = g[i] + (t[i] - pi) / (pi * (1.0 - pi));
            assert!((r2ml[i] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }

        // Q3 for the calibration loss: unit weights, response g + T/pi - 1
        let w3 = surrogate_weights(LossKind::Cal1, Surrogate::Q3, &g);
        let r3 = working_response(LossKind::Cal1, &t, &g, &w3);
        for i in 0..n {
            let pi = crate::data::sigmoid(g[i]);
            assert_eq!(w3[i], 1.0);
            let expect = g[i] + t[i] / pi - 1.0;
            assert!((r3[i] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn lasso_rejects_nonpositive_lambda() {
        let design = intercept_only_design(4);
        let t = [1.0, 0.0, 1.0, 0.0];
        assert!(fit_lasso(LossKind::Cal1, &design, &t, 0.0, &SolverConfig::default(), None)
            .is_err());
    }

    #[test]
    fn degenerate_treatment_rejected() {
        let design = intercept_only_design(3);
        let t = [1.0, 1.0, 1.0];
        assert!(matches!(
            fit_unpenalized(LossKind::Ml, &design, &t, &SolverConfig::default()),
            Err(Error::DegenerateTreatment)
        ));
    }
}


