//! Accelerated proximal gradient with backtracking, restricted to a working
//! set of coordinates that is grown until the full KKT conditions hold.

use super::loss::{Glm, RowTerm, SmoothLoss};
use super::{kkt_residual_by, soft_threshold, SolverConfig, SolverResult};
use crate::error::Result;

/// How often the exact KKT residual is recomputed inside the inner loop.
const KKT_EVERY: usize = 20;

struct Inner<'a, T: RowTerm> {
    loss: &'a Glm<T>,
    lambda: f64,
    ws: Vec<usize>,
    config: &'a SolverConfig,
}

impl<T: RowTerm> Inner<'_, T> {
    fn eta(&self, x: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.loss.n_rows()];
        for (k, &j) in self.ws.iter().enumerate() {
            if x[k] != 0.0 {
                super::loss::axpy(x[k], self.loss.col(j), &mut eta);
            }
        }
        eta
    }

    fn value(&self, x: &[f64], eta: &[f64]) -> f64 {
        self.loss.value_at(&self.full(x), eta)
    }

    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.loss.dim()];
        for (k, &j) in self.ws.iter().enumerate() {
            full[j] = x[k];
        }
        full
    }

    fn value_grad(&self, x: &[f64], eta: &[f64]) -> (f64, Vec<f64>) {
        let (v, r) = self.loss.value_residual(&self.full(x), eta);
        (v, self.ws.iter().map(|&j| self.loss.grad_coord(j, &r)).collect())
    }

    fn grad(&self, eta: &[f64]) -> Vec<f64> {
        let r = self.loss.residual(eta);
        self.ws.iter().map(|&j| self.loss.grad_coord(j, &r)).collect()
    }

    /// Penalty level on working-set entry `k`.
    fn lambda_at(&self, k: usize) -> f64 {
        self.config.lambda_at(self.ws[k], self.lambda)
    }

    fn penalty(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(k, v)| self.lambda_at(k) * v.abs()).sum()
    }

    fn kkt(&self, x: &[f64], eta: &[f64]) -> f64 {
        kkt_residual_by(x, &self.grad(eta), |k| self.lambda_at(k))
    }
}

/// Minimizes `loss(b) + lambda * ||b||_1`.
pub(crate) fn proximal_gradient<T: RowTerm>(
    loss: &Glm<T>,
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolverResult> {
    config.validate()?;
    super::check_lambda(lambda)?;
    let d = loss.dim();
    let mut beta = config.initial(d)?;
    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let mut lipschitz: Option<f64> = None;

    let mut eta_full = loss.eta(&beta);
    let mut grad_full = loss.grad_full(&loss.residual(&eta_full));
    if config.record_trace {
        trace.push(loss.value_at(&beta, &eta_full) + config.penalty(&beta, lambda));
    }

    let mut ws: Vec<usize> = (0..d)
        .filter(|&j| beta[j] != 0.0 || grad_full[j].abs() > config.lambda_at(j, lambda))
        .collect();

    let mut converged = false;
    loop {
        if !ws.is_empty() {
            let inner = Inner {
                loss,
                lambda,
                ws: ws.clone(),
                config,
            };
            let x0: Vec<f64> = ws.iter().map(|&j| beta[j]).collect();
            let budget = config.max_iter.saturating_sub(iterations);
            let (x, used, l_final) = fista(&inner, x0, config, budget, lipschitz, &mut trace);
            iterations += used;
            lipschitz = Some(l_final);
            for (k, &j) in ws.iter().enumerate() {
                beta[j] = x[k];
            }
            eta_full = loss.eta(&beta);
            grad_full = loss.grad_full(&loss.residual(&eta_full));
        }
        let kkt = config.kkt_residual(&beta, &grad_full, lambda);
        if kkt <= config.tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            break;
        }
        // Add every violating coordinate outside the working set; if none,
        // the inner solve simply needs more iterations.
        let mut grew = false;
        for j in 0..d {
            if beta[j] == 0.0 && grad_full[j].abs() > config.lambda_at(j, lambda) + config.tol && !ws.contains(&j) {
                ws.push(j);
                grew = true;
            }
        }
        if grew {
            ws.sort_unstable();
        }
    }

    let objective = loss.value_at(&beta, &eta_full) + config.penalty(&beta, lambda);
    let kkt = config.kkt_residual(&beta, &grad_full, lambda);
    Ok(SolverResult {
        clamp_count: loss.clamp_count(&eta_full),
        coefficients: beta,
        objective,
        kkt_residual: kkt,
        iterations,
        converged,
        gradient: grad_full,
        trace,
    })
}

/// Monotone FISTA on the working set. Returns the iterate, the number of
/// iterations used, and the final step constant.
fn fista<T: RowTerm>(
    p: &Inner<'_, T>,
    x0: Vec<f64>,
    config: &SolverConfig,
    budget: usize,
    l_init: Option<f64>,
    trace: &mut Vec<f64>,
) -> (Vec<f64>, usize, f64) {
    let n = x0.len();
    let mut x = x0;
    let mut eta_x = p.eta(&x);
    let mut obj_x = p.value(&x, &eta_x) + p.penalty(&x);
    let mut l = match l_init {
        Some(v) => v,
        None => p.loss.curvature_bound(&eta_x, &p.ws),
    }
    .max(1e-12);

    let mut y = x.clone();
    let mut eta_y = eta_x.clone();
    let mut t = 1.0f64;
    let mut used = 0;

    while used < budget {
        used += 1;
        let (f_y, g_y) = p.value_grad(&y, &eta_y);

        let mut z = vec![0.0; n];
        let mut eta_z;
        let mut f_z;
        loop {
            for k in 0..n {
                z[k] = soft_threshold(y[k] - g_y[k] / l, p.lambda_at(k) / l);
            }
            eta_z = p.eta(&z);
            f_z = p.value(&z, &eta_z);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for k in 0..n {
                let dz = z[k] - y[k];
                lin += g_y[k] * dz;
                quad += dz * dz;
            }
            let bound = f_y + lin + 0.5 * l * quad;
            if f_z.is_finite() && f_z <= bound + 1e-12 * bound.abs().max(1.0) {
                break;
            }
            l /= config.step_shrink;
            if !l.is_finite() {
                return (x, used, 1.0);
            }
        }

        let step_norm = z
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let obj_z = f_z + p.penalty(&z);

        if obj_z > obj_x {
            // Restart from the last accepted point.
            y.clone_from(&x);
            eta_y.clone_from(&eta_x);
            t = 1.0;
            if config.record_trace {
                trace.push(obj_x);
            }
            if l * step_norm <= 0.5 * config.tol && p.kkt(&x, &eta_x) <= 0.5 * config.tol {
                break;
            }
            continue;
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for k in 0..n {
            y[k] = z[k] + mom * (z[k] - x[k]);
        }
        for i in 0..eta_y.len() {
            eta_y[i] = eta_z[i] + mom * (eta_z[i] - eta_x[i]);
        }
        t = t_next;
        x = z;
        eta_x = eta_z;
        obj_x = obj_z;
        if config.record_trace {
            trace.push(obj_x);
        }

        let check = l * step_norm <= 0.5 * config.tol || used % KKT_EVERY == 0;
        if check && p.kkt(&x, &eta_x) <= 0.5 * config.tol {
            break;
        }
    }
    (x, used, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::offset_logistic_loss;
    use ndarray::array;

    #[test]
    fn trace_is_monotone() {
        let x = array![[1.0, 0.3], [1.0, -1.2], [1.0, 0.8], [1.0, 2.0], [1.0, -0.4]];
        let labels = [1, 0, 1, 1, 0];
        let loss = offset_logistic_loss(x.view(), &labels, &[0.0; 5]).unwrap();
        let cfg = SolverConfig {
            record_trace: true,
            ..SolverConfig::default()
        };
        let res = proximal_gradient(&loss, 0.01, &cfg).unwrap();
        assert!(res.converged);
        for w in res.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!((res.objective - loss.penalized(&res.coefficients, 0.01)).abs() < 1e-12);
    }
}
