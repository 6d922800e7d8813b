//! Implementations of the six subcommands. Each returns `Ok(converged)` so
//! `main` can map non-convergence to exit code 2 after writing results.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array1;
use serde::Serialize;

use propcal::data::{build_design, Dataset, DesignMatrix};
use propcal::estimators::{
    estimate_report, relative_variance, std_calibration_diff, EstimateReport, Orientation,
    WeightSet,
};
use propcal::loss::LossKind;
use propcal::sim::{
    limiting_propensity_experiment, run_monte_carlo, EstimatorKind, HConfig, Scenario,
    SimConfig, REFERENCE_SEED,
};
use propcal::solver::{fit_lasso, fit_unpenalized, FitResult, FitStatus, SolverConfig};
use propcal::tuning::{cv_fit_default_grid, CvResult};

use crate::config::{self, design_spec, load_dataset, out_path, parse_loss, RunConfig};
use crate::output::{g17, write_atomic, write_json};
use crate::FitFlags;

fn status_str(status: &FitStatus) -> &'static str {
    match status {
        FitStatus::Converged => "converged",
        FitStatus::NonConvergence(r) => match r {
            propcal::solver::NonConvergenceReason::Separation => "separation",
            propcal::solver::NonConvergenceReason::IterationLimit => "iteration_limit",
            propcal::solver::NonConvergenceReason::LineSearchStall => "line_search_stall",
        },
    }
}

#[derive(Serialize)]
struct NamedCoef {
    name: String,
    value: f64,
}

#[derive(Serialize)]
struct CvSummary {
    selected_lambda: f64,
    lambda0: f64,
    lambda_values: Vec<f64>,
    cv_values: Vec<f64>,
    fold_failures: Vec<usize>,
    folds: usize,
    seed: u64,
}

impl CvSummary {
    fn from(cv: &CvResult, folds: usize) -> Self {
        Self {
            selected_lambda: cv.selected_lambda,
            lambda0: cv.grid.lambda0,
            lambda_values: cv.grid.values.clone(),
            cv_values: cv.cv_values.clone(),
            fold_failures: cv.fold_failures.clone(),
            folds,
            seed: cv.seed,
        }
    }
}

#[derive(Serialize)]
struct FitJson {
    command: String,
    loss: String,
    lambda: f64,
    status: String,
    converged: bool,
    iterations: usize,
    loss_value: f64,
    penalized_loss: f64,
    n: usize,
    p: usize,
    coefficients: Vec<NamedCoef>,
    active_set: Vec<String>,
    kkt_intercept_residual: f64,
    kkt_max_abs_box: f64,
    kkt_box_residuals: Vec<NamedCoef>,
    overflow: bool,
    ridge_jittered: bool,
    dropped_columns: Vec<String>,
    cv: Option<CvSummary>,
}

struct FittedModel {
    fit: FitResult,
    cv: Option<CvResult>,
}

fn run_fit_on(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    rc: &RunConfig,
    lambda_override: Option<f64>,
) -> Result<FittedModel> {
    let solver = SolverConfig::default();
    if rc.cv && lambda_override.is_none() {
        let (cv, fit) = cv_fit_default_grid(
            kind,
            design,
            treatment,
            rc.grid_subdiv,
            rc.grid_depth,
            rc.cv_folds,
            rc.seed,
            &solver,
        )?;
        return Ok(FittedModel { fit, cv: Some(cv) });
    }
    let lambda = lambda_override.or(rc.lambda).unwrap_or(0.0);
    let fit = if lambda > 0.0 {
        fit_lasso(kind, design, treatment, lambda, &solver, None)?
    } else {
        fit_unpenalized(kind, design, treatment, &solver)?
    };
    Ok(FittedModel { fit, cv: None })
}

fn write_fit_outputs(
    command: &str,
    rc: &RunConfig,
    design: &DesignMatrix,
    model: &FittedModel,
) -> Result<()> {
    let fit = &model.fit;
    let names = design.column_names();
    let json = FitJson {
        command: command.into(),
        loss: rc.loss.clone(),
        lambda: fit.lambda,
        status: status_str(&fit.status).into(),
        converged: fit.status.is_converged(),
        iterations: fit.iterations,
        loss_value: fit.loss,
        penalized_loss: fit.penalized_loss,
        n: design.n(),
        p: design.p(),
        coefficients: names
            .iter()
            .zip(fit.coef.gamma())
            .map(|(name, &value)| NamedCoef { name: name.clone(), value })
            .collect(),
        active_set: fit.coef.active_set().iter().map(|&j| names[j].clone()).collect(),
        kkt_intercept_residual: fit.kkt.intercept_residual,
        kkt_max_abs_box: fit.kkt.max_abs_box,
        kkt_box_residuals: fit
            .kkt
            .penalized_cols
            .iter()
            .zip(&fit.kkt.box_residuals)
            .map(|(&col, &value)| NamedCoef { name: names[col].clone(), value })
            .collect(),
        overflow: fit.overflow,
        ridge_jittered: fit.ridge_jittered,
        dropped_columns: design
            .dropped()
            .iter()
            .map(|(name, reason)| format!("{name} ({reason:?})"))
            .collect(),
        cv: model.cv.as_ref().map(|cv| CvSummary::from(cv, rc.cv_folds)),
    };
    write_json(&out_path(&rc.out_prefix, ".fit.json"), &json)?;
    write_pi_csv(&out_path(&rc.out_prefix, ".pi.csv"), &fit.pi_hat)?;
    if let Some(cv) = &model.cv {
        let mut text = String::from("lambda,cv_value,fold_failures\n");
        for j in 0..cv.grid.values.len() {
            text.push_str(&format!(
                "{},{},{}\n",
                g17(cv.grid.values[j]),
                g17(cv.cv_values[j]),
                cv.fold_failures[j]
            ));
        }
        write_atomic(&out_path(&rc.out_prefix, ".cv.csv"), &text)?;
    }
    Ok(())
}

fn write_pi_csv(path: &Path, pi: &Array1<f64>) -> Result<()> {
    let mut text = String::from("row,pi_hat\n");
    for (i, &p) in pi.iter().enumerate() {
        text.push_str(&format!("{i},{}\n", g17(p)));
    }
    write_atomic(path, &text)
}

fn read_pi_csv(path: &Path, n: usize) -> Result<Array1<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let field = line
            .split(',')
            .nth(1)
            .with_context(|| format!("{}:{}: missing pi_hat field", path.display(), i + 1))?;
        out.push(field.trim().parse::<f64>().with_context(|| {
            format!("{}:{}: pi_hat is not numeric", path.display(), i + 1)
        })?);
    }
    if out.len() != n {
        bail!("propensity file has {} rows, dataset has {n}", out.len());
    }
    Ok(Array1::from_vec(out))
}

fn prepared(rc: &RunConfig) -> Result<(Dataset, DesignMatrix)> {
    let dataset = load_dataset(rc)?;
    let spec = design_spec(rc, &dataset)?;
    let design = if dataset.covariate_names().is_empty() && spec.terms().is_empty() {
        DesignMatrix::intercept_only(dataset.n())?
    } else {
        build_design(&dataset, &spec)?
    };
    Ok((dataset, design))
}

pub fn fit(flags: &FitFlags) -> Result<bool> {
    let rc = config::resolve(flags, "cal1")?;
    let kind = parse_loss(&rc.loss)?;
    let (dataset, design) = prepared(&rc)?;
    let model = run_fit_on(kind, &design, dataset.treatment(), &rc, None)?;
    write_fit_outputs(if rc.cv { "cross-validate" } else { "fit" }, &rc, &design, &model)?;
    Ok(model.fit.status.is_converged())
}

#[derive(Serialize)]
struct EstimateJson {
    command: String,
    loss: String,
    status_treated: String,
    status_untreated: String,
    report: EstimateReport,
    cv_treated: Option<CvSummary>,
    cv_untreated: Option<CvSummary>,
}

/// One arm's propensities: either fitted here or re-ingested from a file.
enum ArmSource {
    Fitted(Box<FittedModel>),
    Ingested(Array1<f64>),
}

impl ArmSource {
    fn pi(&self) -> &Array1<f64> {
        match self {
            ArmSource::Fitted(m) => &m.fit.pi_hat,
            ArmSource::Ingested(pi) => pi,
        }
    }

    fn status(&self) -> String {
        match self {
            ArmSource::Fitted(m) => status_str(&m.fit.status).into(),
            ArmSource::Ingested(_) => "ingested".into(),
        }
    }

    fn lambda(&self) -> Option<f64> {
        match self {
            ArmSource::Fitted(m) => (m.fit.lambda > 0.0).then_some(m.fit.lambda),
            ArmSource::Ingested(_) => None,
        }
    }

    fn cv(&self) -> Option<&CvResult> {
        match self {
            ArmSource::Fitted(m) => m.cv.as_ref(),
            ArmSource::Ingested(_) => None,
        }
    }

    fn converged(&self) -> bool {
        match self {
            ArmSource::Fitted(m) => m.fit.status.is_converged(),
            ArmSource::Ingested(_) => true,
        }
    }
}

pub fn estimate(
    flags: &FitFlags,
    pi1_file: Option<&Path>,
    pi0_file: Option<&Path>,
) -> Result<bool> {
    let rc = config::resolve(flags, "cal")?;
    let (dataset, design) = prepared(&rc)?;
    let outcome = dataset
        .outcome()
        .context("estimate requires --outcome")?
        .to_vec();
    let t = dataset.treatment();

    let loss = rc.loss.clone();
    let ingest = |path: Option<&Path>| -> Result<Option<ArmSource>> {
        Ok(match path {
            Some(p) => Some(ArmSource::Ingested(read_pi_csv(p, design.n())?)),
            None => None,
        })
    };
    let (mut m1, mut m0) = (ingest(pi1_file)?, ingest(pi0_file)?);
    if m1.is_none() || m0.is_none() {
        match loss.as_str() {
            "cal" => {
                if m1.is_none() {
                    let treated = run_fit_on(LossKind::Cal1, &design, t, &rc, None)?;
                    if m0.is_none() {
                        m0 = Some(ArmSource::Fitted(Box::new(if rc.shared_lambda && rc.cv {
                            let lambda = treated.fit.lambda;
                            run_fit_on(LossKind::Cal0, &design, t, &rc, Some(lambda))?
                        } else {
                            run_fit_on(LossKind::Cal0, &design, t, &rc, None)?
                        })));
                    }
                    m1 = Some(ArmSource::Fitted(Box::new(treated)));
                } else {
                    m0 = Some(ArmSource::Fitted(Box::new(run_fit_on(
                        LossKind::Cal0,
                        &design,
                        t,
                        &rc,
                        None,
                    )?)));
                }
            }
            name => {
                let kind = parse_loss(name)?;
                let single = run_fit_on(kind, &design, t, &rc, None)?;
                if m0.is_none() {
                    m0 = Some(ArmSource::Fitted(Box::new(FittedModel {
                        fit: single.fit.clone(),
                        cv: None,
                    })));
                }
                if m1.is_none() {
                    m1 = Some(ArmSource::Fitted(Box::new(single)));
                }
            }
        }
    }
    let (m1, m0) = (m1.expect("treated arm resolved"), m0.expect("untreated arm resolved"));

    let report = estimate_report(
        &design,
        t,
        &outcome,
        m1.pi(),
        m0.pi(),
        m1.lambda(),
        m0.lambda(),
    )?;
    let json = EstimateJson {
        command: "estimate".into(),
        loss,
        status_treated: m1.status(),
        status_untreated: m0.status(),
        report,
        cv_treated: m1.cv().map(|cv| CvSummary::from(cv, rc.cv_folds)),
        cv_untreated: m0.cv().map(|cv| CvSummary::from(cv, rc.cv_folds)),
    };
    write_json(&out_path(&rc.out_prefix, ".estimate.json"), &json)?;
    write_pi_csv(&out_path(&rc.out_prefix, ".pi1.csv"), m1.pi())?;
    write_pi_csv(&out_path(&rc.out_prefix, ".pi0.csv"), m0.pi())?;
    Ok(m1.converged() && m0.converged())
}

#[derive(Serialize)]
struct DiagnoseJson {
    command: String,
    max_abs_cal1: f64,
    max_abs_cal0: f64,
    relvar_treated: f64,
    relvar_untreated: f64,
    n_active: Option<usize>,
    lambda: Option<f64>,
    status: Option<String>,
    columns: Vec<String>,
    cal1: Vec<f64>,
    cal0: Vec<f64>,
    active: Vec<bool>,
}

pub fn diagnose(flags: &FitFlags, pi_file: Option<&Path>) -> Result<bool> {
    let rc = config::resolve(flags, "cal1")?;
    let (dataset, design) = prepared(&rc)?;
    let t = dataset.treatment();

    let (pi, fit): (Array1<f64>, Option<FitResult>) = match pi_file {
        Some(path) => (read_pi_csv(path, design.n())?, None),
        None => {
            let kind = parse_loss(&rc.loss)?;
            let model = run_fit_on(kind, &design, t, &rc, None)?;
            (model.fit.pi_hat.clone(), Some(model.fit))
        }
    };

    let pis = pi.as_slice().expect("contiguous");
    let cal1 = std_calibration_diff(&design, t, pis, Orientation::Treated)?;
    let cal0 = std_calibration_diff(&design, t, pis, Orientation::Untreated)?;
    let ws1 = WeightSet::from_propensities(Orientation::Treated, t, pis)?;
    let ws0 = WeightSet::from_propensities(Orientation::Untreated, t, pis)?;
    let active_cols: Vec<usize> = fit.as_ref().map(|f| f.coef.active_set()).unwrap_or_default();
    let active: Vec<bool> =
        (1..design.values().ncols()).map(|j| active_cols.contains(&j)).collect();
    let max_abs = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));

    let json = DiagnoseJson {
        command: "diagnose".into(),
        max_abs_cal1: max_abs(&cal1),
        max_abs_cal0: max_abs(&cal0),
        relvar_treated: relative_variance(&ws1.weights)?,
        relvar_untreated: relative_variance(&ws0.weights)?,
        n_active: fit.as_ref().map(|f| f.coef.active_set().len()),
        lambda: fit.as_ref().and_then(|f| (f.lambda > 0.0).then_some(f.lambda)),
        status: fit.as_ref().map(|f| status_str(&f.status).into()),
        columns: design.column_names()[1..].to_vec(),
        cal1: cal1.clone(),
        cal0: cal0.clone(),
        active: active.clone(),
    };
    write_json(&out_path(&rc.out_prefix, ".diagnose.json"), &json)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["column", "cal1", "cal0", "active"])?;
    for (j, name) in design.column_names()[1..].iter().enumerate() {
        wtr.write_record([
            name.as_str(),
            &g17(cal1[j]),
            &g17(cal0[j]),
            if active[j] { "1" } else { "0" },
        ])?;
    }
    let text = String::from_utf8(wtr.into_inner()?)?;
    write_atomic(&out_path(&rc.out_prefix, ".balance.csv"), &text)?;
    Ok(fit.is_none_or(|f| f.status.is_converged()))
}

#[derive(Serialize)]
struct SimManifest {
    command: String,
    version: String,
    n: usize,
    p: usize,
    scenario: String,
    h_config: String,
    reps: usize,
    estimators: Vec<String>,
    seed: u64,
    cv_folds: usize,
    grid_subdiv: u32,
    grid_depth: u32,
    rng: String,
    reference_seed: u64,
    reference_mean: f64,
    derived_seeds: Vec<u64>,
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    n: usize,
    p: usize,
    scenario: &str,
    h_config: &str,
    reps: usize,
    estimators: &str,
    seed: u64,
    cv_folds: usize,
    grid_subdiv: u32,
    grid_depth: u32,
    out_prefix: &Path,
) -> Result<bool> {
    let scenario_parsed = match scenario {
        "correct" | "correctly-specified" => Scenario::CorrectlySpecified,
        "misspecified" => Scenario::Misspecified,
        other => bail!("unknown scenario '{other}' (expected correct|misspecified)"),
    };
    let h_parsed = match h_config {
        "lin1" => HConfig::Lin1,
        "lin2" => HConfig::Lin2,
        "quad1" => HConfig::Quad1,
        "quad2" => HConfig::Quad2,
        "exp" => HConfig::Exp,
        "noise" => HConfig::Noise,
        other => bail!("unknown h-config '{other}'"),
    };
    let estimators_parsed: Vec<EstimatorKind> = estimators
        .split(',')
        .map(|name| match name.trim() {
            "true" => Ok(EstimatorKind::True),
            "const" => Ok(EstimatorKind::Const),
            "ml" => Ok(EstimatorKind::Ml),
            "rml" => Ok(EstimatorKind::Rml),
            "cal" => Ok(EstimatorKind::Cal),
            "rcal" => Ok(EstimatorKind::Rcal),
            other => bail!("unknown estimator '{other}'"),
        })
        .collect::<Result<_>>()?;

    let config = SimConfig {
        n,
        p,
        scenario: scenario_parsed,
        h_config: h_parsed,
        n_reps: reps,
        estimators: estimators_parsed.clone(),
        seed,
        cv_folds,
        grid_subdiv,
        grid_depth,
        solver: SolverConfig::default(),
    };
    let out = run_monte_carlo(&config)?;

    let mut metrics = String::from(
        "estimator,reps_used,n_nonconverged,rmse_h,rmse_eps,risk_ml,risk_cal,diff,rdiff,\
         avg_nonzero,avg_nonzero_first4\n",
    );
    for row in &out.rows {
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.estimator.as_str(),
            row.reps_used,
            row.n_nonconverged,
            g17(row.rmse_h),
            g17(row.rmse_eps),
            g17(row.risk_ml),
            g17(row.risk_cal),
            g17(row.diff),
            g17(row.rdiff),
            row.avg_nonzero.map(g17).unwrap_or_default(),
            row.avg_nonzero_first4.map(g17).unwrap_or_default(),
        ));
    }
    write_atomic(&out_path(out_prefix, ".metrics.csv"), &metrics)?;

    let mut replog = String::from("rep,estimator,converged,mu_h,mu_eps,nonzero\n");
    for r in &out.records {
        replog.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.rep,
            r.estimator.as_str(),
            u8::from(r.converged),
            r.mu_h.map(g17).unwrap_or_default(),
            r.mu_eps.map(g17).unwrap_or_default(),
            r.nonzero.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    write_atomic(&out_path(out_prefix, ".replog.csv"), &replog)?;

    let manifest = SimManifest {
        command: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        n,
        p,
        scenario: scenario.into(),
        h_config: h_config.into(),
        reps,
        estimators: estimators_parsed.iter().map(|e| e.as_str().to_string()).collect(),
        seed,
        cv_folds,
        grid_subdiv,
        grid_depth,
        rng: "ChaCha12 per replicate; replicate seed = splitmix64(seed, rep); \
              cross-validation seed = splitmix64(replicate seed, 1); draw order: \
              covariates row-major, then treatments, then noise"
            .into(),
        reference_seed: REFERENCE_SEED,
        reference_mean: out.reference_mean,
        derived_seeds: out.derived_seeds.clone(),
    };
    write_json(&out_path(out_prefix, ".manifest.json"), &manifest)?;
    Ok(true)
}

#[derive(Serialize)]
struct LimitingJson {
    command: String,
    n: usize,
    msre_ml: f64,
    msre_cal: f64,
    msre_bal: f64,
    gamma_ml: Vec<f64>,
    gamma_cal: Vec<f64>,
    gamma_bal: Vec<f64>,
}

pub fn limiting_fit(n: usize, out_prefix: &Path) -> Result<bool> {
    let exp = limiting_propensity_experiment(n, &SolverConfig::default())?;
    let json = LimitingJson {
        command: "limiting-fit".into(),
        n,
        msre_ml: exp.msre_ml,
        msre_cal: exp.msre_cal,
        msre_bal: exp.msre_bal,
        gamma_ml: exp.gamma_ml.clone(),
        gamma_cal: exp.gamma_cal.clone(),
        gamma_bal: exp.gamma_bal.clone(),
    };
    write_json(&out_path(out_prefix, ".limiting.json"), &json)?;

    let mut text = String::from("x,w,pi_star,pi_ml,pi_cal,pi_bal\n");
    for i in 0..exp.x.len() {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g17(exp.x[i]),
            g17(exp.w[i]),
            g17(exp.pi_star[i]),
            g17(exp.pi_ml[i]),
            g17(exp.pi_cal[i]),
            g17(exp.pi_bal[i]),
        ));
    }
    write_atomic(&out_path(out_prefix, ".limiting.csv"), &text)?;
    println!(
        "msre: ml={} cal={} bal={}",
        g17(exp.msre_ml),
        g17(exp.msre_cal),
        g17(exp.msre_bal)
    );
    Ok(true)
}
