//! The four convex losses (maximum likelihood, calibration for either arm,
//! and their balancing sum), their gradients and curvature weights, scalar
//! divergences, empirical Bregman divergences, risk measures, and the IPW
//! mean-squared-error bound.
//!
//! Losses are sample averages over observations. Writing `g_i = gamma' f(X_i)`
//! and `pi_i = sigmoid(g_i)`:
//!
//! * `ML`:   `avg[ log(1 + e^g) - T g ]`, curvature `pi (1 - pi)`;
//! * `CAL1`: `avg[ T e^{-g} + (1 - T) g ]`, curvature `T e^{-g}`;
//! * `CAL0`: `avg[ (1 - T) e^{g} - T g ]`, curvature `(1 - T) e^{g}`;
//! * `BAL`:  `CAL1 + CAL0`, combined exactly term by term.
//!
//! Treatment vectors are `f64` so the same code evaluates limiting fits in
//! which the binary indicator is replaced by a probability.
//!
//! The scalar divergence `L` is returned in its nonnegative orientation
//! (`L(rho, rho') = rho' log(rho'/rho) + (1-rho') log((1-rho')/(1-rho))`),
//! which is the orientation under which the Bregman identities
//! `D_ML = avg[L(pi, pi')]` and `D_CAL = avg[(T/pi')(K + L)]` hold; the
//! identities are pinned numerically in the tests.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::{linear_predictor, sigmoid, Coefficients, DesignMatrix};
use crate::error::{Error, Result};
use crate::util::{mean, pairwise_sum};

/// Exponent saturation bound: `exp` arguments are clamped to this magnitude
/// and the evaluation is flagged as overflowed beyond it.
pub const EXP_CAP: f64 = 700.0;

/// Which loss to evaluate or minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Average negative log-likelihood of logistic regression.
    Ml,
    /// Calibration loss for the treated arm.
    Cal1,
    /// Calibration loss for the untreated arm.
    Cal0,
    /// Balancing loss: CAL1 + CAL0.
    Bal,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Ml => "ml",
            LossKind::Cal1 => "cal1",
            LossKind::Cal0 => "cal0",
            LossKind::Bal => "bal",
        }
    }
}

/// Value, gradient, and per-observation curvature weights of a loss, so that
/// the Hessian is `(1/n) f' diag(w) f` without ever materializing it here.
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub hessian_weights: Array1<f64>,
    /// Some `|g_i|` exceeded [`EXP_CAP`]; values were computed with
    /// saturating exponentials.
    pub overflow: bool,
}

pub(crate) fn sat_exp(x: f64) -> f64 {
    x.clamp(-EXP_CAP, EXP_CAP).exp()
}

fn softplus(g: f64) -> f64 {
    if g > 0.0 {
        g + (-g).exp().ln_1p()
    } else {
        g.exp().ln_1p()
    }
}

/// Per-observation loss value.
pub(crate) fn loss_term(kind: LossKind, t: f64, g: f64) -> f64 {
    match kind {
        LossKind::Ml => softplus(g) - t * g,
        LossKind::Cal1 => t * sat_exp(-g) + (1.0 - t) * g,
        LossKind::Cal0 => (1.0 - t) * sat_exp(g) - t * g,
        LossKind::Bal => loss_term(LossKind::Cal1, t, g) + loss_term(LossKind::Cal0, t, g),
    }
}

/// Per-observation gradient factor `psi_1(t, g) = d loss / d g`.
pub(crate) fn loss_psi1(kind: LossKind, t: f64, g: f64) -> f64 {
    match kind {
        LossKind::Ml => sigmoid(g) - t,
        LossKind::Cal1 => -t * sat_exp(-g) + (1.0 - t),
        LossKind::Cal0 => (1.0 - t) * sat_exp(g) - t,
        LossKind::Bal => loss_psi1(LossKind::Cal1, t, g) + loss_psi1(LossKind::Cal0, t, g),
    }
}

/// Per-observation curvature `psi_2(t, g) = d^2 loss / d g^2 >= 0`.
pub(crate) fn loss_weight(kind: LossKind, t: f64, g: f64) -> f64 {
    match kind {
        LossKind::Ml => {
            let p = sigmoid(g);
            p * (1.0 - p)
        }
        LossKind::Cal1 => t * sat_exp(-g),
        LossKind::Cal0 => (1.0 - t) * sat_exp(g),
        LossKind::Bal => loss_weight(LossKind::Cal1, t, g) + loss_weight(LossKind::Cal0, t, g),
    }
}

/// Fisher-scoring curvature: the conditional expectation of
/// [`loss_weight`] under the logistic model at `g`.
pub(crate) fn fisher_weight(kind: LossKind, g: f64) -> f64 {
    let p = sigmoid(g);
    match kind {
        LossKind::Ml => p * (1.0 - p),
        LossKind::Cal1 => 1.0 - p,
        LossKind::Cal0 => p,
        LossKind::Bal => 1.0,
    }
}

/// Constant curvature upper bound used by the Gram-matrix surrogate.
pub(crate) fn gram_weight(kind: LossKind) -> f64 {
    match kind {
        LossKind::Ml => 0.25,
        LossKind::Cal1 | LossKind::Cal0 | LossKind::Bal => 1.0,
    }
}

/// Loss value alone, from a precomputed linear predictor. Returns the value
/// and the overflow flag.
pub(crate) fn loss_value_from_g(kind: LossKind, g: &[f64], treatment: &[f64]) -> (f64, bool) {
    let overflow = g.iter().any(|&gi| gi.abs() > EXP_CAP);
    let terms: Vec<f64> = g
        .iter()
        .zip(treatment)
        .map(|(&gi, &ti)| loss_term(kind, ti, gi))
        .collect();
    (mean(&terms), overflow)
}

fn check_dims(design: &DesignMatrix, treatment: &[f64]) -> Result<()> {
    if treatment.len() != design.n() {
        return Err(Error::DimensionMismatch(format!(
            "treatment length {} != design rows {}",
            treatment.len(),
            design.n()
        )));
    }
    Ok(())
}

/// Evaluates a loss with its gradient and curvature weights.
///
/// `treatment` entries are 0/1 indicators, or probabilities when computing a
/// limiting (population-style) fit.
pub fn eval_loss(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    coef: &Coefficients,
) -> Result<LossEvaluation> {
    if let LossKind::Bal = kind {
        // combined term by term so that BAL == CAL1 + CAL0 exactly
        let a = eval_loss(LossKind::Cal1, design, treatment, coef)?;
        let b = eval_loss(LossKind::Cal0, design, treatment, coef)?;
        return Ok(LossEvaluation {
            value: a.value + b.value,
            gradient: a.gradient + b.gradient,
            hessian_weights: a.hessian_weights + b.hessian_weights,
            overflow: a.overflow || b.overflow,
        });
    }

    check_dims(design, treatment)?;
    let g = linear_predictor(design, coef)?;
    let n = design.n();
    let k = design.values().ncols();

    let mut terms = Vec::with_capacity(n);
    let mut weights = Array1::zeros(n);
    let mut gradient = Array1::zeros(k);
    let mut overflow = false;
    for i in 0..n {
        let (ti, gi) = (treatment[i], g[i]);
        if gi.abs() > EXP_CAP {
            overflow = true;
        }
        terms.push(loss_term(kind, ti, gi));
        weights[i] = loss_weight(kind, ti, gi);
        let psi = loss_psi1(kind, ti, gi);
        for j in 0..k {
            gradient[j] += psi * design.values()[[i, j]];
        }
    }
    gradient.mapv_inplace(|v| v / n as f64);

    Ok(LossEvaluation { value: mean(&terms), gradient, hessian_weights: weights, overflow })
}

/// The three scalar divergences between two probabilities, all nonnegative
/// and zero exactly when the probabilities agree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceTriple {
    /// Kullback-Leibler divergence of `rho'` relative to `rho`.
    pub l: f64,
    /// `rho'/rho - 1 - log(rho'/rho)`.
    pub k: f64,
    /// Squared relative error `(rho'/rho - 1)^2`.
    pub q: f64,
}

fn check_prob(name: &str, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("{name} = {rho} must lie strictly in (0, 1)")));
    }
    Ok(())
}

/// Computes `L`, `K`, and `Q` for probabilities `rho, rho' in (0, 1)`.
pub fn divergences(rho: f64, rho_prime: f64) -> Result<DivergenceTriple> {
    check_prob("rho", rho)?;
    check_prob("rho_prime", rho_prime)?;
    let ratio = rho_prime / rho;
    let l = rho_prime * (rho_prime / rho).ln()
        + (1.0 - rho_prime) * ((1.0 - rho_prime) / (1.0 - rho)).ln();
    let k = ratio - 1.0 - ratio.ln();
    let q = (ratio - 1.0) * (ratio - 1.0);
    // analytically nonnegative; guard against rounding near rho == rho'
    Ok(DivergenceTriple { l: l.max(0.0), k: k.max(0.0), q })
}

/// Checks the inequality `Q(rho, rho') <= 5/(3a) K(rho, rho')`, valid
/// whenever `rho >= a rho'` with `a in (0, 1/2]`.
pub fn prop4_bound_holds(rho: f64, rho_prime: f64, a: f64) -> Result<bool> {
    if !(a > 0.0 && a <= 0.5) {
        return Err(Error::Domain(format!("a = {a} must lie in (0, 1/2]")));
    }
    check_prob("rho", rho)?;
    check_prob("rho_prime", rho_prime)?;
    if rho < a * rho_prime {
        return Err(Error::PreconditionViolated(format!(
            "rho = {rho} < a * rho_prime = {}",
            a * rho_prime
        )));
    }
    let d = divergences(rho, rho_prime)?;
    Ok(d.q <= 5.0 / (3.0 * a) * d.k)
}

/// Which Bregman divergence to compute in [`empirical_bregman`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BregmanKind {
    Ml,
    Cal,
}

/// An empirical Bregman divergence value with its overflow flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BregmanValue {
    pub value: f64,
    pub overflow: bool,
}

/// Empirical Bregman divergence between two linear predictors.
///
/// The ML divergence is evaluated through its closed form
/// `avg[L(pi, pi')]`; the CAL divergence through its definition
/// `avg[T (e^{-g} - e^{-g'} + e^{-g'} (g - g'))]`. The two routes agree and
/// are cross-checked in tests.
pub fn empirical_bregman(
    kind: BregmanKind,
    g: &[f64],
    g_prime: &[f64],
    treatment: &[f64],
) -> Result<BregmanValue> {
    if g.len() != g_prime.len() || g.len() != treatment.len() {
        return Err(Error::DimensionMismatch(format!(
            "lengths g={}, g'={}, treatment={}",
            g.len(),
            g_prime.len(),
            treatment.len()
        )));
    }
    if g.iter().chain(g_prime).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear predictors".into()));
    }
    let overflow = g
        .iter()
        .chain(g_prime.iter())
        .any(|&v| v.abs() > EXP_CAP);
    let terms: Vec<f64> = match kind {
        BregmanKind::Ml => g
            .iter()
            .zip(g_prime)
            .map(|(&gi, &gpi)| {
                let (p, pp) = (sigmoid(gi), sigmoid(gpi));
                pp * (pp / p).ln() + (1.0 - pp) * ((1.0 - pp) / (1.0 - p)).ln()
            })
            .collect(),
        BregmanKind::Cal => g
            .iter()
            .zip(g_prime)
            .zip(treatment)
            .map(|((&gi, &gpi), &ti)| {
                ti * (sat_exp(-gi) - sat_exp(-gpi) + sat_exp(-gpi) * (gi - gpi))
            })
            .collect(),
    };
    Ok(BregmanValue { value: mean(&terms), overflow })
}

/// Global closeness measures of a fitted predictor to the truth, computed
/// against the true propensities `pi* = sigmoid(g*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskMeasures {
    /// Estimated likelihood risk `avg[log(1 + e^{g}) - pi* g]`.
    pub kappa_ml: f64,
    /// Estimated calibration risk `avg[T (e^{-g} + e^{-g*} g)]`, the
    /// treated-only estimate of `E[pi* e^{-g} + (1 - pi*) g]` (note
    /// `E[T e^{-g*} g | X] = (1 - pi*) g`). It is minimized at `g = g*`
    /// observation by observation, and its excess over `g*` is the
    /// empirical CAL Bregman divergence.
    pub kappa_cal: f64,
    /// `avg[(T/pi*) (pi - pi*)^2]`.
    pub mse: f64,
    /// `avg[(T/pi*) (pi*/pi - 1)^2]`.
    pub msre: f64,
}

/// Computes the risk measures of `g_hat` against the truth `g_star`.
///
/// `treatment` may again hold probabilities for limiting-fit evaluation, in
/// which case passing `pi*` itself yields the deterministic design-average
/// versions of the measures.
pub fn risk_measures(g_hat: &[f64], g_star: &[f64], treatment: &[f64]) -> Result<RiskMeasures> {
    if g_hat.len() != g_star.len() || g_hat.len() != treatment.len() {
        return Err(Error::DimensionMismatch(format!(
            "lengths g_hat={}, g_star={}, treatment={}",
            g_hat.len(),
            g_star.len(),
            treatment.len()
        )));
    }
    let pi_star: Vec<f64> = g_star.iter().map(|&g| sigmoid(g)).collect();
    if pi_star.iter().any(|&p| p <= 0.0 || p >= 1.0) {
        return Err(Error::Domain("true propensities must lie strictly in (0, 1)".into()));
    }
    let n = g_hat.len();
    let mut kml = Vec::with_capacity(n);
    let mut kcal = Vec::with_capacity(n);
    let mut mse = Vec::with_capacity(n);
    let mut msre = Vec::with_capacity(n);
    for i in 0..n {
        let (gh, gs, t, ps) = (g_hat[i], g_star[i], treatment[i], pi_star[i]);
        let ph = sigmoid(gh);
        kml.push(softplus(gh) - ps * gh);
        kcal.push(t * (sat_exp(-gh) + sat_exp(-gs) * gh));
        mse.push(t / ps * (ph - ps) * (ph - ps));
        msre.push(t / ps * (ps / ph - 1.0) * (ps / ph - 1.0));
    }
    Ok(RiskMeasures {
        kappa_ml: mean(&kml),
        kappa_cal: mean(&kcal),
        mse: mean(&mse),
        msre: mean(&msre),
    })
}

/// Upper bound on the mean squared error of the IPW estimator:
/// `c * msre + (2 / (n delta)) * c * (1 + msre)`.
pub fn mse_bound(c: f64, delta: f64, msre: f64, n: usize) -> Result<f64> {
    if c <= 0.0 {
        return Err(Error::Domain(format!("c = {c} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta = {delta} must lie in (0, 1)")));
    }
    if msre < 0.0 {
        return Err(Error::Domain(format!("msre = {msre} must be nonnegative")));
    }
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    Ok(c * msre + 2.0 / (n as f64 * delta) * c * (1.0 + msre))
}

/// Sum of per-observation loss values over a row subset, used by
/// cross-validation to score held-out data.
pub(crate) fn loss_value_on_rows(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    coef: &Coefficients,
    rows: &[usize],
) -> Result<f64> {
    check_dims(design, treatment)?;
    let g = linear_predictor(design, coef)?;
    let terms: Vec<f64> = rows
        .iter()
        .map(|&i| loss_term(kind, treatment[i], g[i]))
        .collect();
    Ok(pairwise_sum(&terms) / rows.len().max(1) as f64)
}
