//! Convex solvers for the four l1-penalized problems used by the estimators.
//!
//! Every objective is scaled as `(1/M) * loss + lambda * ||b||_1`. The
//! intercept coordinate is penalized like any other unless
//! [`SolverConfig::penalize_intercept`] is off. Each solve returns a
//! [`SolverResult`] whose `kkt_residual` certifies subgradient optimality.

mod cv;
mod lasso;
mod logistic;
mod loss;
mod prox;
mod tbr;

pub use cv::{cross_validate_lambda, lambda_grid, stratified_folds, CvProblem, CvResult, PATH_MAX_ITER};
pub use lasso::{fit_lasso_ls, Gram};
pub use logistic::fit_logistic_l1_offset;
pub use loss::{
    least_squares_loss, offset_logistic_loss, tbr_alpha_loss, tbr_alpha_weights, tbr_beta_loss,
    ExpTerm, Glm, LogisticTerm, RowTerm, SmoothLoss, SquaredTerm, EXP_CLAMP,
};
pub use tbr::{fit_tbr_alpha, fit_tbr_beta};

pub(crate) use prox::proximal_gradient;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// KKT residual (infinity norm) at which a solve counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Backtracking factor applied to the step size.
    pub step_shrink: f64,
    /// Starting coefficients; all-zero when `None`.
    pub init: Option<Vec<f64>>,
    /// Record the penalized objective after every iteration.
    pub record_trace: bool,
    /// Penalize coordinate 0 like the others; when false it is left free.
    pub penalize_intercept: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-7,
            max_iter: 10_000,
            step_shrink: 0.5,
            init: None,
            record_trace: false,
            penalize_intercept: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.tol > 0.0) {
            return Err(crate::Error::invalid("solver tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(crate::Error::invalid("solver max_iter must be at least 1"));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(crate::Error::invalid("step_shrink must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn with_init(&self, init: Vec<f64>) -> Self {
        SolverConfig {
            init: Some(init),
            ..self.clone()
        }
    }

    /// Penalty level on coordinate `j`.
    pub fn lambda_at(&self, j: usize, lambda: f64) -> f64 {
        if j == 0 && !self.penalize_intercept {
            0.0
        } else {
            lambda
        }
    }

    /// `sum_j lambda_j |b_j|`.
    pub fn penalty(&self, b: &[f64], lambda: f64) -> f64 {
        b.iter().enumerate().map(|(j, v)| self.lambda_at(j, lambda) * v.abs()).sum()
    }

    pub fn kkt_residual(&self, coefficients: &[f64], gradient: &[f64], lambda: f64) -> f64 {
        kkt_residual_by(coefficients, gradient, |j| self.lambda_at(j, lambda))
    }

    pub(crate) fn initial(&self, d: usize) -> crate::Result<Vec<f64>> {
        match &self.init {
            None => Ok(vec![0.0; d]),
            Some(v) if v.len() == d && v.iter().all(|x| x.is_finite()) => Ok(v.clone()),
            Some(v) => Err(crate::Error::invalid(format!(
                "initial coefficients have length {}, expected {d}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub coefficients: Vec<f64>,
    /// Penalized objective at `coefficients`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient of the smooth part at `coefficients`.
    pub gradient: Vec<f64>,
    /// Rows whose exponent hit the clamp at the returned solution.
    pub clamp_count: usize,
    pub trace: Vec<f64>,
}

impl SolverResult {
    /// Converged but touched the exponent clamp.
    pub fn degraded(&self) -> bool {
        !self.converged || self.clamp_count > 0
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Largest per-coordinate violation of the l1 subgradient optimality condition.
pub fn kkt_residual(coefficients: &[f64], gradient: &[f64], lambda: f64) -> f64 {
    kkt_residual_by(coefficients, gradient, |_| lambda)
}

/// [`kkt_residual`] with penalty level `lambda(j)` on coordinate `j`.
pub fn kkt_residual_by(coefficients: &[f64], gradient: &[f64], lambda: impl Fn(usize) -> f64) -> f64 {
    coefficients
        .iter()
        .zip(gradient)
        .enumerate()
        .map(|(j, (&b, &g))| {
            let l = lambda(j);
            if b == 0.0 {
                (g.abs() - l).max(0.0)
            } else {
                (g + l * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn check_lambda(lambda: f64) -> crate::Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(crate::Error::invalid(format!("penalty level {lambda} must be finite and >= 0")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn kkt_residual_zero_and_active() {
        // zero coordinate within the band, active coordinate balanced
        assert_eq!(kkt_residual(&[0.0, 1.0], &[0.3, -0.5], 0.5), 0.0);
        assert!((kkt_residual(&[0.0], &[0.8], 0.5) - 0.3).abs() < 1e-15);
        assert!((kkt_residual(&[-2.0], &[0.1], 0.5) - 0.4).abs() < 1e-15);
    }
}
