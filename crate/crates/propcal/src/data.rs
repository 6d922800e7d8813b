//! Dataset representation, design-matrix construction, linear predictors, and
//! the logistic link.
//!
//! A [`DesignMatrix`] always carries an intercept in column 0, so the model
//! is `P(T=1|X) = sigmoid(gamma' f(X))` with `f(x) = (1, f_1(x), ..., f_p(x))`.
//! Interaction and square terms are formed from raw covariate values before
//! standardization; standardization (sample mean 0, sample variance 1 with
//! denominator `n - 1`) is applied last and the centers/scales are recorded
//! so raw columns can be recovered.

use std::io::Read;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{mean, sample_sd};

/// Observed data: a binary treatment, an optional outcome, and raw covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    treatment: Vec<f64>,
    outcome: Option<Vec<f64>>,
    covariates: Array2<f64>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Validates and assembles a dataset. Treatment entries must be exactly
    /// 0.0 or 1.0 and every covariate must be finite.
    pub fn new(
        treatment: Vec<f64>,
        outcome: Option<Vec<f64>>,
        covariates: Array2<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = treatment.len();
        if covariates.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariate rows {} != treatment length {}",
                covariates.nrows(),
                n
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        if let Some(y) = &outcome {
            if y.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "outcome length {} != treatment length {}",
                    y.len(),
                    n
                )));
            }
        }
        if treatment.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidData(
                "treatment entries must be exactly 0 or 1".into(),
            ));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate matrix".into()));
        }
        for (i, name) in covariate_names.iter().enumerate() {
            if covariate_names[..i].contains(name) {
                return Err(Error::InvalidData(format!("duplicate covariate '{name}'")));
            }
        }
        Ok(Self { treatment, outcome, covariates, covariate_names })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.outcome.as_deref()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(self.covariates.column(idx).to_vec())
    }
}

/// One regressor selector in a [`DesignSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// A raw covariate column.
    Main(String),
    /// Elementwise product of two raw covariate columns.
    Interaction(String, String),
    /// Square of a raw covariate column.
    Square(String),
}

impl Term {
    /// Canonical interaction term: operand order does not matter.
    pub fn interaction(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Term::Interaction(a, b)
        } else {
            Term::Interaction(b, a)
        }
    }

    pub fn label(&self) -> String {
        match self {
            Term::Main(a) => a.clone(),
            Term::Interaction(a, b) => format!("{a}:{b}"),
            Term::Square(a) => format!("{a}^2"),
        }
    }
}

/// How to expand a [`Dataset`] into a [`DesignMatrix`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSpec {
    terms: Vec<Term>,
    standardize: bool,
    min_nonzero_count: usize,
}

impl DesignSpec {
    /// Rejects duplicate terms (interactions compare order-free).
    pub fn new(terms: Vec<Term>, standardize: bool, min_nonzero_count: usize) -> Result<Self> {
        let mut seen: Vec<String> = Vec::with_capacity(terms.len());
        for term in &terms {
            let canonical = match term {
                Term::Interaction(a, b) => Term::interaction(a.clone(), b.clone()).label(),
                other => other.label(),
            };
            if seen.contains(&canonical) {
                return Err(Error::DuplicateTerm(canonical));
            }
            seen.push(canonical);
        }
        Ok(Self { terms, standardize, min_nonzero_count })
    }

    /// All main effects of a dataset, in column order.
    pub fn main_effects(dataset: &Dataset, standardize: bool) -> Self {
        let terms = dataset
            .covariate_names()
            .iter()
            .map(|c| Term::Main(c.clone()))
            .collect();
        Self { terms, standardize, min_nonzero_count: 0 }
    }

    /// All main effects plus all two-way interactions.
    pub fn with_all_interactions(
        dataset: &Dataset,
        standardize: bool,
        min_nonzero_count: usize,
    ) -> Self {
        let names = dataset.covariate_names();
        let mut terms: Vec<Term> = names.iter().map(|c| Term::Main(c.clone())).collect();
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                terms.push(Term::interaction(names[i].clone(), names[j].clone()));
            }
        }
        Self { terms, standardize, min_nonzero_count }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn standardize(&self) -> bool {
        self.standardize
    }

    pub fn min_nonzero_count(&self) -> usize {
        self.min_nonzero_count
    }
}

/// Why a candidate column was left out of the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    /// Fewer nonzero raw values than the configured threshold.
    TooFewNonzero,
    /// Constant column; carries no information beyond the intercept.
    ZeroVariance,
}

/// Expanded regressor matrix `f(X)` with intercept column and
/// standardization metadata.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Array2<f64>,
    column_names: Vec<String>,
    center: Vec<f64>,
    scale: Vec<f64>,
    standardized: bool,
    dropped: Vec<(String, DropReason)>,
}

impl DesignMatrix {
    /// Builds a design directly from named columns, bypassing term expansion.
    /// Intended for simulated designs and tests; the same standardization
    /// rules as [`build_design`] apply.
    pub fn from_columns(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        standardize: bool,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if columns.is_empty() {
            return Err(Error::EmptyDesign);
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("ragged columns".into()));
        }
        assemble(n, names, columns, standardize, Vec::new(), false)
    }

    /// A design holding nothing but the intercept column.
    pub fn intercept_only(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidData("empty sample".into()));
        }
        assemble(n, Vec::new(), Vec::new(), false, Vec::new(), true)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of non-intercept columns.
    pub fn p(&self) -> usize {
        self.values.ncols() - 1
    }

    /// The `n x (1+p)` matrix; column 0 is identically 1.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Per non-intercept column sample means used for standardization
    /// (zeros when the design is not standardized).
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Per non-intercept column sample standard deviations (denominator
    /// `n - 1`) used for standardization (ones when not standardized).
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn dropped(&self) -> &[(String, DropReason)] {
        &self.dropped
    }

    /// Recovers the raw (pre-standardization) value of non-intercept column
    /// `j` (0-based among non-intercept columns) at row `i`.
    pub fn raw_value(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j + 1]] * self.scale[j] + self.center[j]
    }

    /// Row subset with identical column metadata. Standardization is *not*
    /// recomputed: subsets share the parent's centers and scales so that
    /// cross-validation folds evaluate the same regressors.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            values: self.values.select(ndarray::Axis(0), rows),
            column_names: self.column_names.clone(),
            center: self.center.clone(),
            scale: self.scale.clone(),
            standardized: self.standardized,
            dropped: self.dropped.clone(),
        }
    }
}

/// Coefficient vector paired with its penalty mask. Entry 0 is the intercept
/// and is never penalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficients {
    gamma: Array1<f64>,
    penalty_mask: Vec<bool>,
}

impl Coefficients {
    /// Standard mask: intercept free, all other coordinates penalized.
    pub fn new(gamma: Array1<f64>) -> Self {
        let mut penalty_mask = vec![true; gamma.len()];
        if !penalty_mask.is_empty() {
            penalty_mask[0] = false;
        }
        Self { gamma, penalty_mask }
    }

    pub fn with_mask(gamma: Array1<f64>, penalty_mask: Vec<bool>) -> Result<Self> {
        if gamma.len() != penalty_mask.len() {
            return Err(Error::DimensionMismatch(format!(
                "gamma length {} != mask length {}",
                gamma.len(),
                penalty_mask.len()
            )));
        }
        if penalty_mask.first().copied().unwrap_or(false) {
            return Err(Error::InvalidConfig("intercept must not be penalized".into()));
        }
        Ok(Self { gamma, penalty_mask })
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(Array1::zeros(len))
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self) -> &Array1<f64> {
        &self.gamma
    }

    pub fn gamma_mut(&mut self) -> &mut Array1<f64> {
        &mut self.gamma
    }

    pub fn penalty_mask(&self) -> &[bool] {
        &self.penalty_mask
    }

    /// Indices of penalized coordinates with nonzero estimates.
    pub fn active_set(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.penalty_mask[j] && self.gamma[j] != 0.0)
            .collect()
    }

    /// L1 norm over penalized coordinates.
    pub fn penalized_l1(&self) -> f64 {
        (0..self.len())
            .filter(|&j| self.penalty_mask[j])
            .map(|j| self.gamma[j].abs())
            .sum()
    }
}

/// Expands a dataset into a design matrix: intercept prepended,
/// interaction/square columns computed from raw values, the nonzero-count
/// filter applied uniformly to every candidate column, standardization last.
pub fn build_design(dataset: &Dataset, spec: &DesignSpec) -> Result<DesignMatrix> {
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();

    for term in spec.terms() {
        let label = term.label();
        let raw: Vec<f64> = match term {
            Term::Main(a) => dataset.column_by_name(a)?,
            Term::Interaction(a, b) => {
                let ca = dataset.column_by_name(a)?;
                let cb = dataset.column_by_name(b)?;
                ca.iter().zip(&cb).map(|(x, y)| x * y).collect()
            }
            Term::Square(a) => {
                let ca = dataset.column_by_name(a)?;
                ca.iter().map(|x| x * x).collect()
            }
        };
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("column '{label}'")));
        }
        let nonzero = raw.iter().filter(|&&v| v != 0.0).count();
        if nonzero < spec.min_nonzero_count() {
            dropped.push((label, DropReason::TooFewNonzero));
            continue;
        }
        names.push(label);
        columns.push(raw);
    }

    // a request with no terms at all is an intercept-only model; a request
    // whose every candidate was filtered is an error
    let intercept_only = spec.terms().is_empty();
    assemble(dataset.n(), names, columns, spec.standardize(), dropped, intercept_only)
}

fn assemble(
    n: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    standardize: bool,
    mut dropped: Vec<(String, DropReason)>,
    allow_intercept_only: bool,
) -> Result<DesignMatrix> {
    if n == 0 {
        return Err(Error::InvalidData("empty sample".into()));
    }

    let mut kept_names = Vec::new();
    let mut kept = Vec::new();
    let mut center = Vec::new();
    let mut scale = Vec::new();
    for (name, col) in names.into_iter().zip(columns) {
        if standardize {
            let m = mean(&col);
            let s = sample_sd(&col);
            if s == 0.0 {
                dropped.push((name, DropReason::ZeroVariance));
                continue;
            }
            kept.push(col.iter().map(|v| (v - m) / s).collect::<Vec<f64>>());
            center.push(m);
            scale.push(s);
        } else {
            kept.push(col);
            center.push(0.0);
            scale.push(1.0);
        }
        kept_names.push(name);
    }

    if kept.is_empty() && !allow_intercept_only {
        return Err(Error::EmptyDesign);
    }

    let mut values = Array2::zeros((n, 1 + kept.len()));
    values.column_mut(0).fill(1.0);
    for (j, col) in kept.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[[i, j + 1]] = v;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix".into()));
    }

    let mut column_names = vec!["(intercept)".to_string()];
    column_names.extend(kept_names);

    Ok(DesignMatrix { values, column_names, center, scale, standardized: standardize, dropped })
}

/// Linear predictor `g_i = gamma' f(X_i)`, no clamping.
pub fn linear_predictor(design: &DesignMatrix, coef: &Coefficients) -> Result<Array1<f64>> {
    if coef.len() != design.values().ncols() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient length {} != design columns {}",
            coef.len(),
            design.values().ncols()
        )));
    }
    Ok(design.values().dot(coef.gamma()))
}

/// Overflow-safe logistic link. Never produces NaN; saturates monotonically
/// to 0 or 1 once the exponential under- or overflows.
pub fn sigmoid(g: f64) -> f64 {
    if g >= 0.0 {
        1.0 / (1.0 + (-g).exp())
    } else {
        let e = g.exp();
        e / (1.0 + e)
    }
}

/// `1 - sigmoid(g)` computed without cancellation, i.e. `sigmoid(-g)`.
pub fn sigmoid_complement(g: f64) -> f64 {
    sigmoid(-g)
}

/// Elementwise propensities `pi_i = sigmoid(g_i)`.
pub fn propensity(g: &Array1<f64>) -> Array1<f64> {
    g.mapv(sigmoid)
}

/// Reads a dataset from CSV: a header row, one column holding the 0/1
/// treatment, an optional outcome column, and every remaining column parsed
/// as a numeric covariate.
pub fn read_csv<R: Read>(
    reader: R,
    treatment_col: &str,
    outcome_col: Option<&str>,
) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();

    let t_idx = headers
        .iter()
        .position(|h| h == treatment_col)
        .ok_or_else(|| Error::UnknownColumn(treatment_col.to_string()))?;
    let y_idx = match outcome_col {
        Some(col) => Some(
            headers
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| Error::UnknownColumn(col.to_string()))?,
        ),
        None => None,
    };

    let cov_indices: Vec<usize> = (0..headers.len())
        .filter(|&i| i != t_idx && Some(i) != y_idx)
        .collect();
    let covariate_names: Vec<String> =
        cov_indices.iter().map(|&i| headers[i].clone()).collect();

    let mut treatment = Vec::new();
    let mut outcome: Vec<f64> = Vec::new();
    let mut cov_rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| {
                    Error::InvalidData(format!("row {}: missing field {}", line + 2, i))
                })?
                .trim()
                .parse::<f64>()
                .map_err(|_| {
                    Error::InvalidData(format!(
                        "row {}: column '{}' is not numeric",
                        line + 2,
                        headers[i]
                    ))
                })
        };
        treatment.push(parse(t_idx)?);
        if let Some(yi) = y_idx {
            outcome.push(parse(yi)?);
        }
        cov_rows.push(cov_indices.iter().map(|&i| parse(i)).collect::<Result<Vec<f64>>>()?);
    }

    let n = treatment.len();
    let d = cov_indices.len();
    let mut covariates = Array2::zeros((n, d));
    for (i, row) in cov_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            covariates[[i, j]] = v;
        }
    }

    Dataset::new(treatment, y_idx.map(|_| outcome), covariates, covariate_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_dataset() -> Dataset {
        // X1 = (1, -1, 0, 0), X2 = (0, 0, 1, -1)
        let covariates = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        Dataset::new(
            vec![1.0, 0.0, 1.0, 0.0],
            None,
            covariates,
            vec!["x1".into(), "x2".into()],
        )
        .unwrap()
    }

    #[test]
    fn identity_expansion_keeps_raw_columns() {
        let ds = toy_dataset();
        let spec = DesignSpec::main_effects(&ds, false);
        let design = build_design(&ds, &spec).unwrap();
        assert_eq!(design.values().ncols(), 3);
        assert_eq!(design.column_names(), &["(intercept)", "x1", "x2"]);
        for i in 0..4 {
            assert_eq!(design.values()[[i, 0]], 1.0);
            assert_eq!(design.values()[[i, 1]], ds.covariates()[[i, 0]]);
            assert_eq!(design.values()[[i, 2]], ds.covariates()[[i, 1]]);
        }
    }

    #[test]
    fn constant_column_dropped_under_standardization() {
        let covariates = array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        let ds = Dataset::new(
            vec![1.0, 0.0, 1.0],
            None,
            covariates,
            vec!["c".into(), "x".into()],
        )
        .unwrap();
        let spec = DesignSpec::main_effects(&ds, true);
        let design = build_design(&ds, &spec).unwrap();
        assert_eq!(design.p(), 1);
        assert_eq!(design.dropped(), &[("c".into(), DropReason::ZeroVariance)]);

        // the constant column alone leaves nothing usable
        let only_c = DesignSpec::new(vec![Term::Main("c".into())], true, 0).unwrap();
        assert!(matches!(build_design(&ds, &only_c), Err(Error::EmptyDesign)));
    }

    #[test]
    fn zero_interaction_dropped_by_nonzero_filter() {
        let ds = toy_dataset();
        let spec = DesignSpec::new(
            vec![
                Term::Main("x1".into()),
                Term::Main("x2".into()),
                Term::interaction("x1", "x2"),
            ],
            false,
            1,
        )
        .unwrap();
        let design = build_design(&ds, &spec).unwrap();
        assert_eq!(design.p(), 2);
        assert_eq!(design.dropped(), &[("x1:x2".into(), DropReason::TooFewNonzero)]);
    }

    #[test]
    fn interaction_is_product_of_raw_columns() {
        let covariates = array![[1.0, 2.0], [3.0, -4.0], [0.5, 8.0], [-2.0, 0.25]];
        let ds = Dataset::new(
            vec![1.0, 0.0, 1.0, 0.0],
            None,
            covariates.clone(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let spec = DesignSpec::new(
            vec![Term::Main("a".into()), Term::Main("b".into()), Term::interaction("a", "b")],
            true,
            0,
        )
        .unwrap();
        let design = build_design(&ds, &spec).unwrap();
        // recover raw interaction via recorded center/scale: exact product
        let j = 2; // third non-intercept column
        for i in 0..4 {
            let raw = design.raw_value(i, j);
            let expect = covariates[[i, 0]] * covariates[[i, 1]];
            assert!((raw - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn standardization_has_mean_zero_unit_variance() {
        let covariates = array![[1.0], [4.0], [9.0], [16.0], [25.0]];
        let ds = Dataset::new(
            vec![1.0, 0.0, 1.0, 0.0, 1.0],
            None,
            covariates,
            vec!["x".into()],
        )
        .unwrap();
        let design = build_design(&ds, &DesignSpec::main_effects(&ds, true)).unwrap();
        let col: Vec<f64> = design.values().column(1).to_vec();
        assert!(mean(&col).abs() < 1e-10);
        assert!((sample_sd(&col) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn duplicate_terms_rejected() {
        let terms = vec![Term::Main("x1".into()), Term::Main("x1".into())];
        assert!(matches!(DesignSpec::new(terms, false, 0), Err(Error::DuplicateTerm(_))));
        // interactions are order-free duplicates
        let terms = vec![Term::interaction("a", "b"), Term::interaction("b", "a")];
        assert!(matches!(DesignSpec::new(terms, false, 0), Err(Error::DuplicateTerm(_))));
    }

    #[test]
    fn linear_predictor_examples() {
        let design = DesignMatrix::from_columns(vec!["x".into()], vec![vec![2.0, 2.0]], false)
            .unwrap();
        // zero coefficients
        let zero = Coefficients::zeros(2);
        let g = linear_predictor(&design, &zero).unwrap();
        assert_eq!(g, array![0.0, 0.0]);
        // f = (1, 2), gamma = (0.5, -1) -> -1.5
        let coef = Coefficients::new(array![0.5, -1.0]);
        let g = linear_predictor(&design, &coef).unwrap();
        assert!((g[0] - (-1.5)).abs() < 1e-15);
        // intercept only
        let coef = Coefficients::new(array![1.0, 0.0]);
        let g = linear_predictor(&design, &coef).unwrap();
        assert_eq!(g, array![1.0, 1.0]);
        // dimension mismatch
        let bad = Coefficients::zeros(3);
        assert!(matches!(
            linear_predictor(&design, &bad),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn propensity_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0_f64.ln()) - 0.75).abs() < 1e-15);
        assert!((sigmoid(-(3.0_f64.ln())) - 0.25).abs() < 1e-15);
        // saturation without NaN
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!(sigmoid(-700.0) > 0.0);
        assert!(sigmoid(700.0) <= 1.0);
    }

    #[test]
    fn propensity_symmetry_and_monotonicity() {
        let mut prev = 0.0;
        let mut g = -30.0;
        while g <= 30.0 {
            let p = sigmoid(g);
            assert!((sigmoid_complement(g) - (1.0 - p)).abs() <= 1e-15);
            assert!(p > prev, "sigmoid must be strictly increasing at g={g}");
            prev = p;
            g += 0.25;
        }
    }

    #[test]
    fn csv_round_trip() {
        let csv_text = "t,y,x1,x2\n1,2.5,0.1,-1\n0,3.5,0.2,4\n1,0.5,0.3,9\n";
        let ds = read_csv(csv_text.as_bytes(), "t", Some("y")).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.treatment(), &[1.0, 0.0, 1.0]);
        assert_eq!(ds.outcome().unwrap(), &[2.5, 3.5, 0.5]);
        assert_eq!(ds.covariate_names(), &["x1".to_string(), "x2".to_string()]);
        assert_eq!(ds.covariates()[[2, 1]], 9.0);

        // missing treatment column is reported by name
        let err = read_csv(csv_text.as_bytes(), "treat", None).unwrap_err();
        assert!(err.to_string().contains("treat"));
    }

    #[test]
    fn unstandardize_recovers_raw_columns() {
        let covariates = array![[1.0, 10.0], [2.0, 20.0], [3.0, 35.0], [4.5, 70.0]];
        let ds = Dataset::new(
            vec![1.0, 0.0, 1.0, 0.0],
            None,
            covariates.clone(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let design = build_design(&ds, &DesignSpec::main_effects(&ds, true)).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let raw = design.raw_value(i, j);
                let expect = covariates[[i, j]];
                assert!(
                    (raw - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                    "raw recovery failed at ({i},{j})"
                );
            }
        }
    }
}
