//! Inverse-probability-weighted estimators of population means and treatment
//! effects, balance and weight diagnostics, and nominal standard errors.
//!
//! All sample averages are plain `avg` over the full sample; ratio
//! estimators normalize by the averaged arm weights, which makes them
//! invariant to rescaling the weights. For a converged treated-arm
//! calibration fit the weights average to one, so the plain and ratio IPW
//! estimators coincide.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::util::{mean, pairwise_sum, sample_sd};

/// Which arm an estimator weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Weights `1/pi` on subjects with `T = 1`.
    Treated,
    /// Weights `1/(1 - pi)` on subjects with `T = 0`.
    Untreated,
}

impl Orientation {
    fn arm_indicator(&self, t: f64) -> f64 {
        match self {
            Orientation::Treated => t,
            Orientation::Untreated => 1.0 - t,
        }
    }

    fn arm_prob(&self, pi: f64) -> f64 {
        match self {
            Orientation::Treated => pi,
            Orientation::Untreated => 1.0 - pi,
        }
    }
}

/// Inverse-probability weights on one arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSet {
    pub orientation: Orientation,
    /// Row indices of the arm members, in sample order.
    pub indices: Vec<usize>,
    /// `1 / arm probability` per arm member; always at least 1.
    pub weights: Vec<f64>,
    /// Sample-average of the arm weights, `(1/n) sum_arm w_i`.
    pub normalizer: f64,
}

impl WeightSet {
    pub fn from_propensities(
        orientation: Orientation,
        treatment: &[f64],
        pi_hat: &[f64],
    ) -> Result<Self> {
        if treatment.len() != pi_hat.len() {
            return Err(Error::DimensionMismatch(format!(
                "treatment length {} != propensity length {}",
                treatment.len(),
                pi_hat.len()
            )));
        }
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for i in 0..treatment.len() {
            if orientation.arm_indicator(treatment[i]) == 0.0 {
                continue;
            }
            let pi = pi_hat[i];
            if !(0.0..=1.0).contains(&pi) || !pi.is_finite() {
                return Err(Error::Domain(format!(
                    "propensity {pi} at row {i} lies outside [0, 1]"
                )));
            }
            let prob = orientation.arm_prob(pi);
            if prob <= 0.0 {
                return Err(Error::DegenerateWeights(format!(
                    "arm propensity saturated to zero at row {i}"
                )));
            }
            indices.push(i);
            weights.push(1.0 / prob);
        }
        debug_assert!(weights.iter().all(|&w| w >= 1.0));
        let normalizer = pairwise_sum(&weights) / treatment.len() as f64;
        Ok(Self { orientation, indices, weights, normalizer })
    }
}

/// Plain and ratio IPW estimates of one arm mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpwMeans {
    pub ipw: f64,
    pub ripw: f64,
}

/// IPW estimators of the arm mean of `outcome`:
/// `ipw = avg[A y / q]` and `ripw = ipw / avg[A / q]`, where `A` is the arm
/// indicator and `q` the arm probability.
pub fn ipw_means(
    treatment: &[f64],
    outcome: &[f64],
    pi_hat: &[f64],
    orientation: Orientation,
) -> Result<IpwMeans> {
    if treatment.len() != outcome.len() || treatment.len() != pi_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "lengths treatment={}, outcome={}, pi_hat={}",
            treatment.len(),
            outcome.len(),
            pi_hat.len()
        )));
    }
    let ws = WeightSet::from_propensities(orientation, treatment, pi_hat)?;
    let n = treatment.len() as f64;
    let weighted: Vec<f64> =
        ws.indices.iter().zip(&ws.weights).map(|(&i, &w)| w * outcome[i]).collect();
    let ipw = pairwise_sum(&weighted) / n;
    Ok(IpwMeans { ipw, ripw: ipw / ws.normalizer })
}

/// ATT estimates: the treated mean and IPW estimates of the untreated
/// counterfactual mean among the treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub nu1: f64,
    pub nu0_ipw: f64,
    pub nu0_ripw: f64,
    /// `nu1 - nu0_ripw`.
    pub att: f64,
}

/// Estimates the average treatment effect on the treated from an
/// untreated-arm propensity fit: `nu1 = avg[T y]/avg[T]`,
/// `nu0_ipw = avg[(1-T) odds y]/avg[T]` with `odds = pi/(1-pi)`, and the
/// ratio form normalizing by `avg[(1-T) odds]`. For an exactly calibrated
/// untreated-arm fit the two `nu0` forms coincide.
pub fn estimate_att(treatment: &[f64], outcome: &[f64], pi0: &[f64]) -> Result<AttEstimate> {
    if treatment.len() != outcome.len() || treatment.len() != pi0.len() {
        return Err(Error::DimensionMismatch(format!(
            "lengths treatment={}, outcome={}, pi0={}",
            treatment.len(),
            outcome.len(),
            pi0.len()
        )));
    }
    let n = treatment.len() as f64;
    let tbar = mean(treatment);
    if tbar == 0.0 {
        return Err(Error::ArmTooSmall("no treated subjects".into()));
    }
    let ty: Vec<f64> = treatment.iter().zip(outcome).map(|(&t, &y)| t * y).collect();
    let nu1 = pairwise_sum(&ty) / n / tbar;

    let mut oy = Vec::new();
    let mut o = Vec::new();
    for i in 0..treatment.len() {
        if treatment[i] == 1.0 {
            continue;
        }
        let q = 1.0 - pi0[i];
        if q <= 0.0 {
            return Err(Error::DegenerateWeights(format!(
                "untreated propensity saturated to one at row {i}"
            )));
        }
        let odds = pi0[i] / q;
        oy.push(odds * outcome[i]);
        o.push(odds);
    }
    if o.is_empty() {
        return Err(Error::ArmTooSmall("no untreated subjects".into()));
    }
    let num = pairwise_sum(&oy) / n;
    let denom = pairwise_sum(&o) / n;
    if denom == 0.0 {
        return Err(Error::DegenerateWeights("all untreated odds are zero".into()));
    }
    let nu0_ipw = num / tbar;
    let nu0_ripw = num / denom;
    Ok(AttEstimate { nu1, nu0_ipw, nu0_ripw, att: nu1 - nu0_ripw })
}

/// Normalized odds weights on the untreated arm,
/// `w_i = odds_i / sum_arm odds`, as `(row, weight)` pairs. For an exactly
/// calibrated untreated-arm fit these weights reproduce the treated-arm mean
/// of every design column (the entropy-balancing property), and
/// `sum w_i y_i` equals the ratio-IPW estimate of the counterfactual mean.
pub fn entropy_balancing_weights(treatment: &[f64], pi0: &[f64]) -> Result<Vec<(usize, f64)>> {
    if treatment.len() != pi0.len() {
        return Err(Error::DimensionMismatch(format!(
            "treatment length {} != pi0 length {}",
            treatment.len(),
            pi0.len()
        )));
    }
    let mut odds = Vec::new();
    for i in 0..treatment.len() {
        if treatment[i] == 1.0 {
            continue;
        }
        let q = 1.0 - pi0[i];
        if q <= 0.0 {
            return Err(Error::DegenerateWeights(format!(
                "untreated propensity saturated to one at row {i}"
            )));
        }
        odds.push((i, pi0[i] / q));
    }
    if odds.is_empty() {
        return Err(Error::ArmTooSmall("no untreated subjects".into()));
    }
    let total: f64 = pairwise_sum(&odds.iter().map(|&(_, o)| o).collect::<Vec<f64>>());
    if total == 0.0 {
        return Err(Error::DegenerateWeights("all untreated odds are zero".into()));
    }
    Ok(odds.into_iter().map(|(i, o)| (i, o / total)).collect())
}

/// Standardized calibration differences, one per non-intercept column:
/// `(ripw mean of f_j on the arm - avg f_j) / sd(f_j)`.
pub fn std_calibration_diff(
    design: &DesignMatrix,
    treatment: &[f64],
    pi_hat: &[f64],
    orientation: Orientation,
) -> Result<Vec<f64>> {
    if treatment.len() != design.n() {
        return Err(Error::DimensionMismatch(format!(
            "treatment length {} != design rows {}",
            treatment.len(),
            design.n()
        )));
    }
    let mut out = Vec::with_capacity(design.p());
    for j in 1..design.values().ncols() {
        let col: Vec<f64> = design.values().column(j).to_vec();
        let sd = sample_sd(&col);
        if sd == 0.0 {
            return Err(Error::ZeroVariance(design.column_names()[j].clone()));
        }
        let m = ipw_means(treatment, &col, pi_hat, orientation)?;
        out.push((m.ripw - mean(&col)) / sd);
    }
    Ok(out)
}

/// Relative variance of a weighted sample:
/// `sum (w - wbar)^2 / ((m - 1) wbar^2)`.
pub fn relative_variance(weights: &[f64]) -> Result<f64> {
    let m = weights.len();
    if m < 2 {
        return Err(Error::ArmTooSmall(format!("{m} weights; need at least 2")));
    }
    let wbar = mean(weights);
    if wbar == 0.0 {
        return Err(Error::Domain("mean weight is zero".into()));
    }
    let dev: Vec<f64> = weights.iter().map(|&w| (w - wbar) * (w - wbar)).collect();
    Ok(pairwise_sum(&dev) / ((m - 1) as f64 * wbar * wbar))
}

/// Nominal standard error of the ratio-IPW arm mean, treating the fitted
/// weights as fixed: `sqrt(avg[(A/q)^2 (y - ripw)^2] / n) / avg[A/q]`.
pub fn nominal_se(
    outcome: &[f64],
    treatment: &[f64],
    pi_hat: &[f64],
    orientation: Orientation,
) -> Result<f64> {
    let m = ipw_means(treatment, outcome, pi_hat, orientation)?;
    let ws = WeightSet::from_propensities(orientation, treatment, pi_hat)?;
    if ws.indices.is_empty() {
        return Err(Error::ArmTooSmall("empty arm".into()));
    }
    let n = treatment.len() as f64;
    let terms: Vec<f64> = ws
        .indices
        .iter()
        .zip(&ws.weights)
        .map(|(&i, &w)| {
            let d = outcome[i] - m.ripw;
            w * w * d * d
        })
        .collect();
    let var_num = pairwise_sum(&terms) / n;
    Ok((var_num / n).sqrt() / ws.normalizer)
}

/// Full estimation report for a pair of propensity fits (`pi1` oriented to
/// the treated arm, `pi0` to the untreated arm; they may be the same fit).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mu1_ipw: f64,
    pub mu1_ripw: f64,
    pub mu0_ipw: f64,
    pub mu0_ripw: f64,
    /// `mu1_ripw - mu0_ripw`.
    pub ate: f64,
    pub se_mu1: f64,
    pub se_mu0: f64,
    /// `sqrt(se_mu1^2 + se_mu0^2)`.
    pub se_ate: f64,
    pub nu1: Option<f64>,
    pub nu0_ipw: Option<f64>,
    pub nu0_ripw: Option<f64>,
    pub att: Option<f64>,
    /// Standardized calibration differences per non-intercept column.
    pub balance_treated: Vec<f64>,
    pub balance_untreated: Vec<f64>,
    pub max_abs_cal1: f64,
    pub max_abs_cal0: f64,
    /// Relative variance of the inverse-probability weights per arm.
    pub relvar_treated: f64,
    pub relvar_untreated: f64,
    pub lambda_treated: Option<f64>,
    pub lambda_untreated: Option<f64>,
    /// Non-intercept column names, aligned with the balance vectors.
    pub columns: Vec<String>,
}

/// Assembles the point estimates, nominal standard errors, and diagnostics
/// from fitted propensities for both orientations.
pub fn estimate_report(
    design: &DesignMatrix,
    treatment: &[f64],
    outcome: &[f64],
    pi1: &Array1<f64>,
    pi0: &Array1<f64>,
    lambda_treated: Option<f64>,
    lambda_untreated: Option<f64>,
) -> Result<EstimateReport> {
    let pi1s = pi1.as_slice().expect("contiguous");
    let pi0s = pi0.as_slice().expect("contiguous");
    let m1 = ipw_means(treatment, outcome, pi1s, Orientation::Treated)?;
    let m0 = ipw_means(treatment, outcome, pi0s, Orientation::Untreated)?;
    let se_mu1 = nominal_se(outcome, treatment, pi1s, Orientation::Treated)?;
    let se_mu0 = nominal_se(outcome, treatment, pi0s, Orientation::Untreated)?;
    let att = estimate_att(treatment, outcome, pi0s)?;
    let balance_treated = std_calibration_diff(design, treatment, pi1s, Orientation::Treated)?;
    let balance_untreated =
        std_calibration_diff(design, treatment, pi0s, Orientation::Untreated)?;
    let ws1 = WeightSet::from_propensities(Orientation::Treated, treatment, pi1s)?;
    let ws0 = WeightSet::from_propensities(Orientation::Untreated, treatment, pi0s)?;
    let max_abs = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    Ok(EstimateReport {
        mu1_ipw: m1.ipw,
        mu1_ripw: m1.ripw,
        mu0_ipw: m0.ipw,
        mu0_ripw: m0.ripw,
        ate: m1.ripw - m0.ripw,
        se_mu1,
        se_mu0,
        se_ate: (se_mu1 * se_mu1 + se_mu0 * se_mu0).sqrt(),
        nu1: Some(att.nu1),
        nu0_ipw: Some(att.nu0_ipw),
        nu0_ripw: Some(att.nu0_ripw),
        att: Some(att.att),
        max_abs_cal1: max_abs(&balance_treated),
        max_abs_cal0: max_abs(&balance_untreated),
        balance_treated,
        balance_untreated,
        relvar_treated: relative_variance(&ws1.weights)?,
        relvar_untreated: relative_variance(&ws0.weights)?,
        lambda_treated,
        lambda_untreated,
        columns: design.column_names()[1..].to_vec(),
    })
}
