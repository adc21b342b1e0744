use ndarray::ArrayView2;

use super::{offset_logistic_loss, proximal_gradient, SolverConfig, SolverResult};
use crate::error::Result;

/// Minimizes `(1/M) sum_i [log(1 + exp(x_i'b + o_i)) - G_i (x_i'b + o_i)] + lambda ||b||_1`.
///
/// With one-class labels and no penalty on the intercept no minimizer exists;
/// the result then always reports `converged = false`, whatever the iterate's
/// gradient has decayed to.
pub fn fit_logistic_l1_offset(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    offset: &[f64],
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let loss = offset_logistic_loss(x, labels, offset)?;
    let mut res = proximal_gradient(&loss, lambda, config)?;
    let one_class = labels.iter().all(|&l| l == labels[0]);
    if (lambda == 0.0 || !config.penalize_intercept) && one_class {
        res.converged = false;
    }
    Ok(res)
}
