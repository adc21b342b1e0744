//! Targeted bias-reducing fits: the exponential-tilting loss for the
//! propensity coefficients and the tilted least squares for the outcome.

use ndarray::ArrayView2;

use super::{fit_lasso_ls, proximal_gradient, tbr_alpha_weights, tbr_beta_loss, SolverConfig, SolverResult};
use crate::error::{Error, Result};

/// Minimizes `(1/M) sum_i [(1 - G_i) x_i'b + (G_i / gamma_hat) exp(-x_i'b)] + lambda ||b||_1`.
pub fn fit_tbr_beta(
    x: ArrayView2<'_, f64>,
    gamma: &[u8],
    gamma_hat: f64,
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let ones = gamma.iter().filter(|&&g| g == 1).count();
    if ones == 0 || ones == gamma.len() {
        return Err(Error::degenerate(
            "targeted propensity fit needs both labeled and unlabeled rows",
        ));
    }
    let loss = tbr_beta_loss(x, gamma, gamma_hat)?;
    proximal_gradient(&loss, lambda, config)
}

/// Minimizes `(1/M) sum_i (G_i / gamma_hat) exp(-x_i'beta_hat) (y_i - x_i'a)^2 + lambda ||a||_1`.
///
/// Entries of `outcome` on rows with `G_i = 0` are ignored and may be NaN.
pub fn fit_tbr_alpha(
    x: ArrayView2<'_, f64>,
    gamma: &[u8],
    outcome: &[f64],
    gamma_hat: f64,
    beta_hat: &[f64],
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let m = gamma.len();
    if x.nrows() != m || outcome.len() != m {
        return Err(Error::invalid("gamma, outcome and design must have the same rows"));
    }
    if !(gamma_hat > 0.0 && gamma_hat < 1.0) {
        return Err(Error::invalid(format!("gamma_hat = {gamma_hat} must lie in (0, 1)")));
    }
    if beta_hat.len() != x.ncols() || beta_hat.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta_hat must be finite with one entry per column"));
    }
    let weights = tbr_alpha_weights(x, gamma, gamma_hat, beta_hat);
    let labeled: Vec<usize> = (0..m).filter(|&i| weights[i] > 0.0).collect();
    if labeled.is_empty() {
        return Err(Error::invalid("all effective tilting weights are zero"));
    }
    // The lasso averages over its own rows; rescale so the average is over M.
    let scale = labeled.len() as f64 / m as f64;
    let xs = x.select(ndarray::Axis(0), &labeled);
    let ys: Vec<f64> = labeled.iter().map(|&i| outcome[i]).collect();
    let ws: Vec<f64> = labeled.iter().map(|&i| weights[i] * scale).collect();
    fit_lasso_ls(xs.view(), &ys, &ws, lambda, config)
}
