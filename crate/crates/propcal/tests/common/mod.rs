#![allow(dead_code)] // each suite uses its own subset

//! Shared helpers for the integration suites: an independent
//! proximal-gradient (FISTA) minimizer of the penalized losses, used as the
//! oracle the production solver is checked against, and simulation-style
//! instance generators.

use ndarray::Array1;
use propcal::data::{Coefficients, DesignMatrix};
use propcal::loss::{eval_loss, LossKind};
use propcal::sim::{generate_replicate, EstimatorKind, HConfig, Scenario, SimConfig};
use propcal::solver::SolverConfig;

/// Accelerated proximal gradient with backtracking and adaptive restart.
/// Minimizes `loss(gamma) + lambda * sum_{penalized} |gamma_j|` and returns
/// the iterate and its penalized objective. Independent of the production
/// solver: no surrogates, no active sets, no QR.
pub fn prox_gradient_minimize(
    kind: LossKind,
    design: &DesignMatrix,
    treatment: &[f64],
    lambda: f64,
    max_iters: usize,
) -> (Array1<f64>, f64) {
    let k = design.values().ncols();
    let tbar = treatment.iter().sum::<f64>() / treatment.len() as f64;
    let mut gamma = Array1::zeros(k);
    gamma[0] = (tbar / (1.0 - tbar)).ln();

    let penalized = |c: &Array1<f64>| -> f64 {
        lambda * c.iter().skip(1).map(|v| v.abs()).sum::<f64>()
    };
    let objective = |c: &Array1<f64>| -> f64 {
        let ev = eval_loss(kind, design, treatment, &Coefficients::new(c.clone())).unwrap();
        ev.value + penalized(c)
    };

    let mut y = gamma.clone();
    let mut theta = 1.0_f64;
    let mut step = 1.0_f64;
    let mut f_cur = objective(&gamma);
    let mut flat_iters = 0usize;

    for _ in 0..max_iters {
        let ev_y = eval_loss(kind, design, treatment, &Coefficients::new(y.clone())).unwrap();
        // backtrack the step until the quadratic model majorizes at y
        let mut cand;
        loop {
            cand = y.clone();
            for j in 0..k {
                let moved = y[j] - step * ev_y.gradient[j];
                cand[j] = if j == 0 {
                    moved
                } else {
                    soft_threshold(moved, step * lambda)
                };
            }
            let diff = &cand - &y;
            let ev_c =
                eval_loss(kind, design, treatment, &Coefficients::new(cand.clone())).unwrap();
            let rhs = ev_y.value
                + ev_y.gradient.dot(&diff)
                + diff.dot(&diff) / (2.0 * step);
            if ev_c.value <= rhs + 1e-14 {
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                break;
            }
        }
        let f_new = objective(&cand);
        if f_new > f_cur {
            // adaptive restart: drop the momentum and retry from the
            // current iterate
            y = gamma.clone();
            theta = 1.0;
            flat_iters += 1;
            if flat_iters > 200 {
                break;
            }
            continue;
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_new;
        y = &cand + &((&cand - &gamma) * momentum);
        theta = theta_new;
        let decrement = f_cur - f_new;
        gamma = cand;
        f_cur = f_new;
        flat_iters = if decrement <= 1e-15 * f_cur.abs().max(1.0) { flat_iters + 1 } else { 0 };
        if flat_iters >= 50 {
            break;
        }
        step *= 1.5; // allow the step to grow back after backtracks
    }
    (gamma, f_cur)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// A simulation-style instance: realistic overlap, both scenarios.
pub fn sim_instance(
    n: usize,
    p: usize,
    scenario: Scenario,
    seed: u64,
) -> (DesignMatrix, Vec<f64>) {
    let config = SimConfig {
        n,
        p,
        scenario,
        h_config: HConfig::Lin1,
        n_reps: 1,
        estimators: vec![EstimatorKind::True],
        seed,
        cv_folds: 5,
        grid_subdiv: 1,
        grid_depth: 10,
        solver: SolverConfig::default(),
    };
    let rep = generate_replicate(&config, seed).unwrap();
    (rep.design, rep.treatment)
}
