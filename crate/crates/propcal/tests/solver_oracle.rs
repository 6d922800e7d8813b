//! Cross-checks of the penalized solver against the independent
//! proximal-gradient minimizer, plus the dual-feasibility property of
//! calibrated fits.

mod common;

use common::{prox_gradient_minimize, sim_instance};
use propcal::data::sigmoid;
use propcal::loss::LossKind;
use propcal::sim::Scenario;
use propcal::solver::{fit_lasso, SolverConfig};
use propcal::tuning::lambda_max;

#[test]
fn lasso_matches_prox_gradient_on_single_covariate_ml() {
    // one standardized covariate in the quadratic regime: the WLS-surrogate
    // fixed point soft-thresholds the unpenalized slope; verify the solution
    // against the independent minimizer
    use propcal::data::DesignMatrix;
    let n = 120;
    let col: Vec<f64> = (0..n).map(|i| ((i * 13) % 29) as f64 / 7.0 - 2.0).collect();
    let design = DesignMatrix::from_columns(vec!["x".into()], vec![col.clone()], true).unwrap();
    let t: Vec<f64> = (0..n)
        .map(|i| f64::from(sigmoid(0.8 * design.values()[[i, 1]]) > ((i * 17) % 31) as f64 / 31.0))
        .collect();
    let lam0 = lambda_max(LossKind::Ml, &design, &t).unwrap();
    let lambda = lam0 / 4.0;
    let fit = fit_lasso(LossKind::Ml, &design, &t, lambda, &SolverConfig::default(), None)
        .unwrap();
    assert!(fit.status.is_converged());
    let (gamma_oracle, f_oracle) =
        prox_gradient_minimize(LossKind::Ml, &design, &t, lambda, 100_000);
    assert!(
        (fit.penalized_loss - f_oracle).abs() <= 1e-6,
        "solver {} vs oracle {f_oracle}",
        fit.penalized_loss
    );
    // the solver may not do worse than the oracle by more than round-off,
    // and the slopes must agree
    assert!(fit.penalized_loss <= f_oracle + 1e-9);
    assert!((fit.coef.gamma()[1] - gamma_oracle[1]).abs() <= 1e-5);
    // the penalty shrinks the slope strictly toward zero
    let unpen = propcal::solver::fit_unpenalized(
        LossKind::Ml,
        &design,
        &t,
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(fit.coef.gamma()[1].abs() < unpen.coef.gamma()[1].abs());
}

#[test]
fn lasso_matches_prox_gradient_across_kinds() {
    let sizes = [(100usize, 5usize), (150, 8), (200, 12)];
    for (idx, kind) in [LossKind::Ml, LossKind::Cal1, LossKind::Cal0, LossKind::Bal]
        .into_iter()
        .enumerate()
    {
        for (jdx, &(n, p)) in sizes.iter().enumerate() {
            let scenario = if (idx + jdx) % 2 == 0 {
                Scenario::CorrectlySpecified
            } else {
                Scenario::Misspecified
            };
            let (design, t) = sim_instance(n, p, scenario, 100 + (idx * 10 + jdx) as u64);
            let lam0 = lambda_max(kind, &design, &t).unwrap();
            let lambda = lam0 / 4.0;
            let fit =
                fit_lasso(kind, &design, &t, lambda, &SolverConfig::default(), None).unwrap();
            assert!(fit.status.is_converged(), "{kind:?} n={n} p={p}");
            let (_, f_oracle) = prox_gradient_minimize(kind, &design, &t, lambda, 100_000);
            assert!(
                (fit.penalized_loss - f_oracle).abs() <= 1e-6,
                "{kind:?} n={n} p={p}: solver {} vs oracle {f_oracle}",
                fit.penalized_loss
            );
        }
    }
}

#[test]
fn cal1_solution_is_dual_feasible() {
    // the inverse-probability weights of a converged penalized calibrated
    // fit solve the dual program: weights sum to n and each weighted
    // imbalance is at most n * lambda
    for seed in [1u64, 2, 3, 4] {
        let (design, t) = sim_instance(150, 6, Scenario::CorrectlySpecified, seed);
        let n = design.n() as f64;
        let lam0 = lambda_max(LossKind::Cal1, &design, &t).unwrap();
        let lambda = lam0 / 4.0;
        let fit = fit_lasso(LossKind::Cal1, &design, &t, lambda, &SolverConfig::default(), None)
            .unwrap();
        assert!(fit.status.is_converged());
        let g = design.values().dot(fit.coef.gamma());
        let w: Vec<f64> = (0..design.n())
            .map(|i| if t[i] == 1.0 { 1.0 / sigmoid(g[i]) } else { 0.0 })
            .collect();
        let sum_w: f64 = w.iter().sum();
        assert!((sum_w - n).abs() <= 1e-6 * n, "weights sum {sum_w} vs n {n}");
        for j in 1..design.values().ncols() {
            let weighted: f64 =
                (0..design.n()).map(|i| w[i] * design.values()[[i, j]]).sum();
            let total: f64 = (0..design.n()).map(|i| design.values()[[i, j]]).sum();
            assert!(
                (weighted - total).abs() <= n * lambda + 1e-6 * n,
                "column {j}: |{weighted} - {total}| > n lambda"
            );
        }
    }
}

#[test]
fn rml_solution_is_dual_feasible() {
    // the fitted probabilities of a penalized ML fit solve the entropy
    // program: residuals sum to zero and each covariate residual is bounded
    // by n * lambda
    for seed in [21u64, 22, 23] {
        let (design, t) = sim_instance(150, 6, Scenario::Misspecified, seed);
        let n = design.n() as f64;
        let lam0 = lambda_max(LossKind::Ml, &design, &t).unwrap();
        let lambda = lam0 / 4.0;
        let fit = fit_lasso(LossKind::Ml, &design, &t, lambda, &SolverConfig::default(), None)
            .unwrap();
        assert!(fit.status.is_converged());
        let resid_sum: f64 = (0..design.n()).map(|i| t[i] - fit.pi_hat[i]).sum();
        assert!(resid_sum.abs() <= 1e-6 * n, "residual sum {resid_sum}");
        for j in 1..design.values().ncols() {
            let r: f64 = (0..design.n())
                .map(|i| (t[i] - fit.pi_hat[i]) * design.values()[[i, j]])
                .sum();
            assert!(
                r.abs() <= n * lambda + 1e-6 * n,
                "column {j}: |{r}| > n lambda = {}",
                n * lambda
            );
        }
    }
}

#[test]
fn warm_start_path_is_consistent_with_cold_fits() {
    // each path entry solves its own problem: compare penalized objectives
    // against cold-started fits at the same lambda
    let (design, t) = sim_instance(120, 6, Scenario::Misspecified, 55);
    let lam0 = lambda_max(LossKind::Cal1, &design, &t).unwrap();
    let lambdas: Vec<f64> = (0..6).map(|j| lam0 / (2.0_f64).powi(j)).collect();
    let path =
        propcal::solver::fit_lasso_path(LossKind::Cal1, &design, &t, &lambdas, &SolverConfig::default())
            .unwrap();
    for (j, fit) in path.iter().enumerate() {
        if !fit.status.is_converged() {
            continue;
        }
        let cold = fit_lasso(
            LossKind::Cal1,
            &design,
            &t,
            lambdas[j],
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        assert!(
            (fit.penalized_loss - cold.penalized_loss).abs() <= 1e-7,
            "lambda {}: warm {} vs cold {}",
            lambdas[j],
            fit.penalized_loss,
            cold.penalized_loss
        );
    }
}
