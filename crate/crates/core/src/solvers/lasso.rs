//! Weighted lasso by cyclic coordinate descent on the weighted Gram matrix.

use ndarray::{Array2, ArrayView2};

use super::{check_lambda, kkt_residual_by, soft_threshold, SolverConfig, SolverResult};
use crate::error::{Error, Result};

/// Sufficient statistics of `(1/M) sum_i w_i (y_i - x_i' a)^2`:
/// `G = (1/M) X'WX`, `b = (1/M) X'Wy`, `c = (1/M) sum_i w_i y_i^2`.
#[derive(Debug, Clone)]
pub struct Gram {
    pub g: Array2<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl Gram {
    pub fn new(x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64]) -> Result<Self> {
        let m = x.nrows();
        if y.len() != m || weights.len() != m {
            return Err(Error::invalid(format!(
                "lasso inputs disagree: {m} rows, {} responses, {} weights",
                y.len(),
                weights.len()
            )));
        }
        if m == 0 {
            return Err(Error::invalid("lasso needs at least one row"));
        }
        if x.iter().chain(y).chain(weights).any(|v| !v.is_finite()) {
            return Err(Error::invalid("lasso inputs must be finite"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("lasso weights must be nonnegative"));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::invalid("all lasso weights are zero"));
        }
        let rows: Vec<usize> = (0..m).filter(|&i| weights[i] > 0.0).collect();
        Ok(Self::accumulate(x, y, weights, &rows, m as f64))
    }

    /// Statistics over `rows` only, normalized by `denom`.
    pub(crate) fn accumulate(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        weights: &[f64],
        rows: &[usize],
        denom: f64,
    ) -> Self {
        let d = x.ncols();
        let mut g = Array2::<f64>::zeros((d, d));
        let mut b = vec![0.0; d];
        let mut c = 0.0;
        let mut xr = vec![0.0; d];
        for &i in rows {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            for (k, v) in x.row(i).iter().enumerate() {
                xr[k] = *v;
            }
            for j in 0..d {
                let wx = w * xr[j];
                b[j] += wx * y[i];
                let mut grow = g.row_mut(j);
                for k in j..d {
                    grow[k] += wx * xr[k];
                }
            }
            c += w * y[i] * y[i];
        }
        for j in 0..d {
            for k in j..d {
                let v = g[[j, k]] / denom;
                g[[j, k]] = v;
                g[[k, j]] = v;
            }
            b[j] /= denom;
        }
        Gram { g, b, c: c / denom }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `a'Ga - 2 b'a + c`.
    pub fn loss(&self, a: &[f64]) -> f64 {
        let ga = self.mul(a);
        let q: f64 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
        let l: f64 = a.iter().zip(&self.b).map(|(x, y)| x * y).sum();
        q - 2.0 * l + self.c
    }

    pub fn gradient(&self, a: &[f64]) -> Vec<f64> {
        self.mul(a)
            .iter()
            .zip(&self.b)
            .map(|(ga, b)| 2.0 * (ga - b))
            .collect()
    }

    fn mul(&self, a: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (k, &ak) in a.iter().enumerate() {
            if ak != 0.0 {
                let col = self.g.column(k);
                for j in 0..d {
                    out[j] += col[j] * ak;
                }
            }
        }
        out
    }

    pub(crate) fn sub(&self, other: &Gram, self_denom: f64, other_denom: f64, new_denom: f64) -> Gram {
        let s = self_denom / new_denom;
        let o = other_denom / new_denom;
        let g = &self.g * s - &other.g * o;
        let b = self.b.iter().zip(&other.b).map(|(x, y)| x * s - y * o).collect();
        Gram {
            g,
            b,
            c: self.c * s - other.c * o,
        }
    }
}

/// Coordinate descent on `a'Ga - 2b'a + c + lambda ||a||_1`.
pub(crate) fn lasso_cd(gram: &Gram, lambda: f64, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    check_lambda(lambda)?;
    let d = gram.dim();
    let mut a = config.initial(d)?;
    // r = G a, kept in sync with every coordinate move.
    let mut ga = gram.mul(&a);
    let objective = |a: &[f64], ga: &[f64]| -> f64 {
        let q: f64 = a.iter().zip(ga).map(|(x, y)| x * y).sum();
        let l: f64 = a.iter().zip(&gram.b).map(|(x, y)| x * y).sum();
        q - 2.0 * l + gram.c + config.penalty(a, lambda)
    };
    let lam = |j: usize| config.lambda_at(j, lambda);
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(objective(&a, &ga));
    }

    let sweep = |a: &mut Vec<f64>, ga: &mut Vec<f64>, coords: &[usize]| -> f64 {
        let mut max_move = 0.0f64;
        for &j in coords {
            let gjj = gram.g[[j, j]];
            if gjj <= 0.0 {
                // Column is identically zero on the weighted rows.
                if a[j] != 0.0 {
                    let old = a[j];
                    a[j] = 0.0;
                    let col = gram.g.column(j);
                    for k in 0..d {
                        ga[k] -= col[k] * old;
                    }
                }
                continue;
            }
            let old = a[j];
            let partial = gram.b[j] - (ga[j] - gjj * old);
            let new = soft_threshold(partial, 0.5 * lam(j)) / gjj;
            if new != old {
                let delta = new - old;
                let col = gram.g.column(j);
                for k in 0..d {
                    ga[k] += col[k] * delta;
                }
                a[j] = new;
                max_move = max_move.max(delta.abs() * gjj.sqrt());
            }
        }
        max_move
    };

    let all: Vec<usize> = (0..d).collect();
    let mut iterations = 0;
    let mut converged = false;
    let grad = |ga: &[f64]| -> Vec<f64> { ga.iter().zip(&gram.b).map(|(g, b)| 2.0 * (g - b)).collect() };
    while iterations < config.max_iter {
        iterations += 1;
        sweep(&mut a, &mut ga, &all);
        if config.record_trace {
            trace.push(objective(&a, &ga));
        }
        // Iterate on the active set until it settles, then re-sweep everything.
        let active: Vec<usize> = (0..d).filter(|&j| a[j] != 0.0).collect();
        while iterations < config.max_iter {
            let g = grad(&ga);
            let sub_a: Vec<f64> = active.iter().map(|&j| a[j]).collect();
            let sub_g: Vec<f64> = active.iter().map(|&j| g[j]).collect();
            let worst = kkt_residual_by(&sub_a, &sub_g, |k| lam(active[k]));
            if worst <= 0.5 * config.tol {
                break;
            }
            iterations += 1;
            let mv = sweep(&mut a, &mut ga, &active);
            if config.record_trace {
                trace.push(objective(&a, &ga));
            }
            if mv == 0.0 {
                break;
            }
        }
        // Resync to avoid drift from incremental updates.
        ga = gram.mul(&a);
        if config.kkt_residual(&a, &grad(&ga), lambda) <= config.tol {
            converged = true;
            break;
        }
    }
    let gradient = grad(&ga);
    Ok(SolverResult {
        objective: objective(&a, &ga),
        kkt_residual: config.kkt_residual(&a, &gradient, lambda),
        coefficients: a,
        iterations,
        converged,
        gradient,
        clamp_count: 0,
        trace,
    })
}

/// Minimizes `(1/M) sum_i w_i (y_i - x_i' a)^2 + lambda ||a||_1`.
pub fn fit_lasso_ls(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    weights: &[f64],
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let gram = Gram::new(x, y, weights)?;
    lasso_cd(&gram, lambda, config)
}
