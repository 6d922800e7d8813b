//! Lasso-penalized weighted least squares by an active-set method.
//!
//! Minimizes `(1/2n) sum_i w_i (y_i - f_i' gamma)^2 + lambda * sum_j |gamma_j|`
//! over the penalized coordinates, with unpenalized coordinates always free.
//! The active set alternates between (a) solving the equality-constrained
//! problem on the current support, (b) stepping back to the first sign
//! crossing and dropping that coordinate, and (c) adding the most violating
//! inactive coordinate, which terminates finitely.
//!
//! The equality solves reuse a thin QR factorization of the weighted active
//! columns `sqrt(w) f_j`: columns are appended by Gram-Schmidt and removed by
//! Givens downdates, so the factorization is computed once and updated as the
//! support changes. Near-singular active blocks fall back to normal equations
//! with a small ridge on the Gram diagonal; the fallback is reported to the
//! caller.

// indexed loops over parallel arrays are the clearer idiom here
#![allow(clippy::needless_range_loop)]

use ndarray::Array1;

use crate::data::{Coefficients, DesignMatrix};
use crate::error::{Error, Result};

/// Tolerance on the inner KKT residual `|c_j| - lambda`.
pub(crate) const INNER_KKT_TOL: f64 = 1e-12;

/// Relative column-norm threshold below which the active block is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Ridge added to the active Gram diagonal when rank deficiency is detected.
const RIDGE_JITTER: f64 = 1e-10;

/// Cached factorization state for one weight vector. Reusable across calls
/// as long as the weights are unchanged (the caller guarantees this).
pub(crate) struct WlsWorkspace {
    n: usize,
    sqrt_w: Vec<f64>,
    /// Design column index held at each factor position.
    cols: Vec<usize>,
    /// Orthonormal columns of the thin QR (abandoned once `ridged`).
    q: Vec<Vec<f64>>,
    /// Upper-triangular factor stored by column; `r[j].len() == j + 1`.
    r: Vec<Vec<f64>>,
    ridged: bool,
}

impl WlsWorkspace {
    pub(crate) fn new(n: usize, weights: &[f64]) -> Result<Self> {
        if weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "weights length {} != rows {n}",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Domain("weights must not all be zero".into()));
        }
        Ok(Self {
            n,
            sqrt_w: weights.iter().map(|w| w.sqrt()).collect(),
            cols: Vec::new(),
            q: Vec::new(),
            r: Vec::new(),
            ridged: false,
        })
    }

    #[cfg(test)]
    pub(crate) fn ridged(&self) -> bool {
        self.ridged
    }

    fn weighted_col(&self, design: &DesignMatrix, col: usize) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.sqrt_w[i] * design.values()[[i, col]])
            .collect()
    }

    fn append(&mut self, design: &DesignMatrix, col: usize) {
        debug_assert!(!self.cols.contains(&col));
        self.cols.push(col);
        if self.ridged {
            return;
        }
        let b = self.weighted_col(design, col);
        let norm_b = norm(&b);
        let mut v = b;
        let k = self.q.len();
        let mut u = vec![0.0; k];
        // modified Gram-Schmidt with one reorthogonalization pass
        for _ in 0..2 {
            for (j, qj) in self.q.iter().enumerate() {
                let c = dot(qj, &v);
                u[j] += c;
                for (vi, qi) in v.iter_mut().zip(qj) {
                    *vi -= c * qi;
                }
            }
        }
        let norm_v = norm(&v);
        if norm_v <= RANK_TOL * norm_b.max(1.0) {
            self.ridged = true;
            self.q.clear();
            self.r.clear();
            return;
        }
        for vi in &mut v {
            *vi /= norm_v;
        }
        self.q.push(v);
        u.push(norm_v);
        self.r.push(u);
    }

    fn remove(&mut self, pos: usize) {
        self.cols.remove(pos);
        if self.ridged {
            return;
        }
        self.r.remove(pos);
        let k = self.r.len(); // columns remaining; q still has k + 1
        for j in pos..k {
            // zero the subdiagonal entry r[j][j + 1] with a Givens rotation
            // acting on rows (j, j + 1) of R and the matching Q columns
            let a = self.r[j][j];
            let b = self.r[j][j + 1];
            let (c, s) = givens(a, b);
            for m in j..k {
                let rm = &mut self.r[m];
                let (x, y) = (rm[j], rm[j + 1]);
                rm[j] = c * x + s * y;
                rm[j + 1] = -s * x + c * y;
            }
            let (qa, qb) = twomut(&mut self.q, j, j + 1);
            for i in 0..self.n {
                let (x, y) = (qa[i], qb[i]);
                qa[i] = c * x + s * y;
                qb[i] = -s * x + c * y;
            }
        }
        for (j, col) in self.r.iter_mut().enumerate().skip(pos) {
            col.truncate(j + 1);
        }
        self.q.pop();
    }

    /// Removes/appends columns so the factorization holds exactly `desired`
    /// (order of existing columns is preserved; new ones go to the back).
    fn sync(&mut self, design: &DesignMatrix, desired: &[usize]) {
        let mut pos = 0;
        while pos < self.cols.len() {
            if desired.contains(&self.cols[pos]) {
                pos += 1;
            } else {
                self.remove(pos);
            }
        }
        for &col in desired {
            if !self.cols.contains(&col) {
                self.append(design, col);
            }
        }
    }

    /// Solves the equality-constrained problem on the current columns:
    /// `(1/n) B'B gamma = (1/n) B'z - lambda * signs`.
    fn solve(&self, design: &DesignMatrix, z: &[f64], lambda: f64, signs: &[f64]) -> Vec<f64> {
        let k = self.cols.len();
        if k == 0 {
            return Vec::new();
        }
        if self.ridged {
            return self.solve_ridged(design, z, lambda, signs);
        }
        let nf = self.n as f64;
        let u: Vec<f64> = self.q.iter().map(|qj| dot(qj, z)).collect();
        // rhs = u - n * lambda * R^{-T} signs
        let mut rhs = u;
        if lambda > 0.0 && signs.iter().any(|&s| s != 0.0) {
            let mut w = vec![0.0; k];
            for i in 0..k {
                let mut acc = signs[i];
                for j in 0..i {
                    acc -= self.r[i][j] * w[j];
                }
                w[i] = acc / self.r[i][i];
            }
            for i in 0..k {
                rhs[i] -= nf * lambda * w[i];
            }
        }
        let mut gamma = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = rhs[i];
            for j in (i + 1)..k {
                acc -= self.r[j][i] * gamma[j];
            }
            gamma[i] = acc / self.r[i][i];
        }
        gamma
    }

    fn solve_ridged(
        &self,
        design: &DesignMatrix,
        z: &[f64],
        lambda: f64,
        signs: &[f64],
    ) -> Vec<f64> {
        let k = self.cols.len();
        let nf = self.n as f64;
        let b: Vec<Vec<f64>> = self.cols.iter().map(|&c| self.weighted_col(design, c)).collect();
        let mut gram = vec![vec![0.0; k]; k];
        for a in 0..k {
            for c in a..k {
                let v = dot(&b[a], &b[c]) / nf;
                gram[a][c] = v;
                gram[c][a] = v;
            }
        }
        let rhs: Vec<f64> = (0..k)
            .map(|a| dot(&b[a], z) / nf - lambda * signs[a])
            .collect();
        let mut jitter = RIDGE_JITTER;
        loop {
            if let Some(sol) = cholesky_solve(&gram, &rhs, jitter) {
                return sol;
            }
            jitter *= 100.0;
            if jitter > 1.0 {
                // diagonal now dominates; cannot fail
                return cholesky_solve(&gram, &rhs, 1.0).unwrap_or_else(|| vec![0.0; k]);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let h = a.hypot(b);
        (a / h, b / h)
    }
}

fn twomut(v: &mut [Vec<f64>], i: usize, j: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(i < j);
    let (head, tail) = v.split_at_mut(j);
    (&mut head[i], &mut tail[0])
}

pub(crate) fn cholesky_solve(gram: &[Vec<f64>], rhs: &[f64], jitter: f64) -> Option<Vec<f64>> {
    let k = rhs.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut acc = gram[i][j] + if i == j { jitter } else { 0.0 };
            for m in 0..j {
                acc -= l[i][m] * l[j][m];
            }
            if i == j {
                if acc <= 0.0 {
                    return None;
                }
                l[i][j] = acc.sqrt();
            } else {
                l[i][j] = acc / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut acc = rhs[i];
        for j in 0..i {
            acc -= l[i][j] * y[j];
        }
        y[i] = acc / l[i][i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = y[i];
        for j in (i + 1)..k {
            acc -= l[j][i] * x[j];
        }
        x[i] = acc / l[i][i];
    }
    Some(x)
}

/// Runs the active-set iteration in a caller-owned workspace. `warm` supplies
/// both the starting support and the interpolation point for sign crossings.
/// Returns the full-length solution and whether the ridge fallback fired.
pub(crate) fn solve_in_workspace(
    ws: &mut WlsWorkspace,
    design: &DesignMatrix,
    response: &[f64],
    lambda: f64,
    penalty_mask: &[bool],
    warm: &Array1<f64>,
    max_updates: usize,
) -> Result<(Array1<f64>, bool)> {
    let n = design.n();
    let ncols = design.values().ncols();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response length {} != rows {n}",
            response.len()
        )));
    }
    if penalty_mask.len() != ncols || warm.len() != ncols {
        return Err(Error::DimensionMismatch(format!(
            "mask/warm length must equal design columns {ncols}"
        )));
    }
    if lambda < 0.0 {
        return Err(Error::Domain(format!("lambda = {lambda} must be nonnegative")));
    }

    let desired: Vec<usize> = (0..ncols)
        .filter(|&j| !penalty_mask[j] || warm[j] != 0.0)
        .collect();
    ws.sync(design, &desired);

    let mut signs: Vec<f64> = ws.cols.iter().map(|&j| {
        if penalty_mask[j] { warm[j].signum() * f64::from(warm[j] != 0.0) } else { 0.0 }
    }).collect();
    let mut cur: Vec<f64> = ws.cols.iter().map(|&j| warm[j]).collect();
    let z: Vec<f64> = (0..n).map(|i| ws.sqrt_w[i] * response[i]).collect();
    let nf = n as f64;

    let mut updates = 0;
    loop {
        let new = ws.solve(design, &z, lambda, &signs);

        // (b) retreat to the first sign crossing and drop that coordinate
        if lambda > 0.0 {
            let mut alpha = f64::INFINITY;
            let mut drop_pos = None;
            for (pos, &col) in ws.cols.iter().enumerate() {
                if !penalty_mask[col] || signs[pos] == 0.0 {
                    continue;
                }
                if new[pos] * signs[pos] < 0.0 || new[pos] == 0.0 {
                    let denom = cur[pos] - new[pos];
                    let a = if denom != 0.0 { (cur[pos] / denom).clamp(0.0, 1.0) } else { 0.0 };
                    if a < alpha {
                        alpha = a;
                        drop_pos = Some(pos);
                    }
                }
            }
            if let Some(pos) = drop_pos {
                for (c, nv) in cur.iter_mut().zip(&new) {
                    *c += alpha * (nv - *c);
                }
                ws.remove(pos);
                cur.remove(pos);
                signs.remove(pos);
                updates += 1;
                if updates >= max_updates {
                    break;
                }
                continue;
            }
        }
        cur = new;

        // (c) add the most violating inactive coordinate
        let mut fitted = vec![0.0; n];
        for (pos, &col) in ws.cols.iter().enumerate() {
            let g = cur[pos];
            if g == 0.0 {
                continue;
            }
            for i in 0..n {
                fitted[i] += g * design.values()[[i, col]];
            }
        }
        let mut worst: Option<(usize, f64, f64)> = None; // (col, |c_j|, c_j)
        for j in 0..ncols {
            if !penalty_mask[j] || ws.cols.contains(&j) {
                continue;
            }
            let mut c = 0.0;
            for i in 0..n {
                c += ws.sqrt_w[i]
                    * ws.sqrt_w[i]
                    * (response[i] - fitted[i])
                    * design.values()[[i, j]];
            }
            c /= nf;
            if c.abs() > lambda + INNER_KKT_TOL
                && worst.is_none_or(|(_, best, _)| c.abs() > best)
            {
                worst = Some((j, c.abs(), c));
            }
        }
        match worst {
            None => break,
            Some((j, _, c)) => {
                ws.append(design, j);
                cur.push(0.0);
                signs.push(c.signum());
                updates += 1;
                if updates >= max_updates {
                    break;
                }
            }
        }
    }

    let mut full = Array1::zeros(ncols);
    for (pos, &col) in ws.cols.iter().enumerate() {
        full[col] = cur[pos];
    }
    Ok((full, ws.ridged))
}

/// One-shot exact minimizer of the Lasso-penalized weighted least squares
/// problem `(1/2n) sum w_i (response_i - f_i' gamma)^2 + lambda |gamma|_1`
/// over penalized coordinates (the intercept and any other unpenalized
/// coordinates stay free).
pub fn solve_wls_lasso(
    design: &DesignMatrix,
    response: &[f64],
    weights: &[f64],
    lambda: f64,
    penalty_mask: &[bool],
    warm_start: Option<&Coefficients>,
) -> Result<Coefficients> {
    let ncols = design.values().ncols();
    let warm = match warm_start {
        Some(c) => {
            if c.len() != ncols {
                return Err(Error::DimensionMismatch(format!(
                    "warm start length {} != design columns {ncols}",
                    c.len()
                )));
            }
            c.gamma().clone()
        }
        None => Array1::zeros(ncols),
    };
    let mut ws = WlsWorkspace::new(design.n(), weights)?;
    let max_updates = 50 * ncols + 1000;
    let (gamma, _ridged) =
        solve_in_workspace(&mut ws, design, response, lambda, penalty_mask, &warm, max_updates)?;
    Coefficients::with_mask(gamma, penalty_mask.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DesignMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_design(rng: &mut ChaCha12Rng, n: usize, p: usize) -> DesignMatrix {
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        DesignMatrix::from_columns(names, cols, false).unwrap()
    }

    #[test]
    fn qr_update_matches_rebuild() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let n = 30;
        let p = 8;
        let design = random_design(&mut rng, n, p);
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();

        let mut ws = WlsWorkspace::new(n, &weights).unwrap();
        for j in [0usize, 3, 5, 1, 7, 2] {
            ws.append(&design, j);
        }
        ws.remove(1); // drop col 3
        ws.remove(3); // drop col 7
        ws.append(&design, 4);

        // check B = Q R and Q orthonormal on the surviving columns
        assert!(!ws.ridged());
        let k = ws.cols.len();
        for a in 0..k {
            for b in 0..k {
                let d = dot(&ws.q[a], &ws.q[b]);
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-10, "Q'Q[{a},{b}] = {d}");
            }
        }
        for (pos, &col) in ws.cols.iter().enumerate() {
            let bcol = ws.weighted_col(&design, col);
            for i in 0..n {
                // B[:, pos] = sum_j Q[:, j] R[j, pos], R stored by column
                let rec: f64 = (0..=pos).map(|j| ws.q[j][i] * ws.r[pos][j]).sum();
                assert!((rec - bcol[i]).abs() < 1e-10, "QR mismatch col {col} row {i}");
            }
        }
    }

    #[test]
    fn unpenalized_wls_has_orthogonal_residuals() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let n = 40;
        let p = 4;
        let design = random_design(&mut rng, n, p);
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mask = vec![false, true, true, true, true];
        let coef = solve_wls_lasso(&design, &y, &weights, 0.0, &mask, None).unwrap();
        for j in 0..design.values().ncols() {
            let mut c = 0.0;
            for i in 0..n {
                let fitted: f64 = (0..design.values().ncols())
                    .map(|m| design.values()[[i, m]] * coef.gamma()[m])
                    .sum();
                c += weights[i] * (y[i] - fitted) * design.values()[[i, j]];
            }
            assert!((c / n as f64).abs() < 1e-10, "column {j} residual correlation {c}");
        }
    }

    #[test]
    fn soft_threshold_closed_form() {
        // unit weights, one centered column with (1/n) sum x^2 = 1
        let x = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let n = x.len();
        let design = DesignMatrix::from_columns(vec!["x".into()], vec![x.clone()], false).unwrap();
        let y = vec![2.0, -0.5, 1.5, -1.0, 2.5, 0.0];
        let rho: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let ybar: f64 = y.iter().sum::<f64>() / n as f64;
        let mask = vec![false, true];
        for lambda in [0.0, 0.2, 0.5, rho.abs() + 0.1] {
            let coef =
                solve_wls_lasso(&design, &y, &vec![1.0; n], lambda, &mask, None).unwrap();
            let expect = rho.signum() * (rho.abs() - lambda).max(0.0);
            assert!(
                (coef.gamma()[1] - expect).abs() < 1e-10,
                "lambda {lambda}: slope {} vs {expect}",
                coef.gamma()[1]
            );
            assert!((coef.gamma()[0] - ybar).abs() < 1e-10);
        }
    }

    #[test]
    fn full_shrinkage_leaves_weighted_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let n = 25;
        let design = random_design(&mut rng, n, 3);
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mask = vec![false, true, true, true];
        let coef = solve_wls_lasso(&design, &y, &weights, 1e6, &mask, None).unwrap();
        assert!(coef.gamma().iter().skip(1).all(|&v| v == 0.0));
        let wmean: f64 =
            y.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() / weights.iter().sum::<f64>();
        assert!((coef.gamma()[0] - wmean).abs() < 1e-10);
    }

    #[test]
    fn kkt_holds_on_random_penalized_problems() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for trial in 0..25 {
            let n = rng.gen_range(10..60);
            let p = rng.gen_range(2..10);
            let design = random_design(&mut rng, n, p);
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            if weights.iter().all(|&w| w == 0.0) {
                continue;
            }
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lambda = rng.gen_range(0.01..0.5);
            let mut mask = vec![true; p + 1];
            mask[0] = false;
            let coef = solve_wls_lasso(&design, &y, &weights, lambda, &mask, None).unwrap();
            // KKT: |c_j| <= lambda + tol, equality (to tol) on the support,
            // exact zero residual on the intercept
            for j in 0..=p {
                let mut c = 0.0;
                for i in 0..n {
                    let fitted: f64 = (0..=p)
                        .map(|m| design.values()[[i, m]] * coef.gamma()[m])
                        .sum();
                    c += weights[i] * (y[i] - fitted) * design.values()[[i, j]];
                }
                c /= n as f64;
                if j == 0 {
                    assert!(c.abs() < 1e-9, "trial {trial}: intercept residual {c}");
                } else if coef.gamma()[j] != 0.0 {
                    assert!(
                        (c - lambda * coef.gamma()[j].signum()).abs() < 1e-9,
                        "trial {trial}: active col {j} c = {c}, lambda = {lambda}"
                    );
                } else {
                    assert!(
                        c.abs() <= lambda + 1e-9,
                        "trial {trial}: inactive col {j} violates box: {c} vs {lambda}"
                    );
                }
            }
        }
    }

    #[test]
    fn duplicate_columns_trigger_ridge_fallback() {
        let x = vec![1.0, 2.0, -1.0, 0.5, 3.0];
        let design = DesignMatrix::from_columns(
            vec!["a".into(), "b".into()],
            vec![x.clone(), x.clone()],
            false,
        )
        .unwrap();
        let y = vec![1.0, 2.0, 0.0, 1.0, -1.0];
        let mask = vec![false, true, true];
        // lambda = 0 forces both duplicate columns into the active set
        let coef = solve_wls_lasso(&design, &y, &[1.0; 5], 0.0, &mask, None).unwrap();
        assert!(coef.gamma().iter().all(|v| v.is_finite()));
    }
}
