//! Smooth losses of the form `scale * sum_i phi_i(x_i' b) + c' b`.
//!
//! All four penalized problems fit this template. The design is stored
//! column-major so that gradients restricted to a working set and sparse
//! linear-predictor updates both touch contiguous memory.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Bound on `|x' b|` inside the exponential of the tilted losses.
pub const EXP_CLAMP: f64 = 40.0;

/// Per-row scalar loss `phi_i(eta)`.
pub trait RowTerm: Send + Sync {
    fn value(&self, i: usize, eta: f64) -> f64;
    fn deriv(&self, i: usize, eta: f64) -> f64;
    /// Second derivative, used only to size the first proximal step.
    fn curvature(&self, i: usize, eta: f64) -> f64;
    fn clamped(&self, _i: usize, _eta: f64) -> bool {
        false
    }
    /// `(value, deriv)` in one evaluation.
    fn value_deriv(&self, i: usize, eta: f64) -> (f64, f64) {
        (self.value(i, eta), self.deriv(i, eta))
    }
}

/// A differentiable loss of `d` coefficients.
pub trait SmoothLoss {
    fn dim(&self) -> usize;
    fn value(&self, beta: &[f64]) -> f64;
    fn gradient(&self, beta: &[f64]) -> Vec<f64>;

    fn penalized(&self, beta: &[f64], lambda: f64) -> f64 {
        self.value(beta) + lambda * super::l1_norm(beta)
    }
}

#[derive(Debug, Clone)]
pub struct Glm<T: RowTerm> {
    cols: Vec<f64>,
    m: usize,
    d: usize,
    term: T,
    linear: Vec<f64>,
    scale: f64,
}

impl<T: RowTerm> Glm<T> {
    /// `rows` selects the rows of `x` that enter the sum; `scale` multiplies it.
    pub(crate) fn new(x: ArrayView2<'_, f64>, rows: &[usize], term: T, linear: Vec<f64>, scale: f64) -> Self {
        let d = x.ncols();
        let m = rows.len();
        let mut cols = vec![0.0; d * m];
        for (r, &i) in rows.iter().enumerate() {
            let row = x.row(i);
            for j in 0..d {
                cols[j * m + r] = row[j];
            }
        }
        debug_assert_eq!(linear.len(), d);
        Glm {
            cols,
            m,
            d,
            term,
            linear,
            scale,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.m
    }

    pub fn term(&self) -> &T {
        &self.term
    }

    pub(crate) fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.m..(j + 1) * self.m]
    }

    /// Linear predictor using only the nonzero coefficients.
    pub(crate) fn eta(&self, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.m];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                axpy(b, self.col(j), &mut eta);
            }
        }
        eta
    }

    pub(crate) fn value_at(&self, beta: &[f64], eta: &[f64]) -> f64 {
        let s: f64 = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| self.term.value(i, e))
            .sum();
        self.scale * s + dot(&self.linear, beta)
    }

    /// Loss value and per-row derivatives from a single pass over `eta`.
    pub(crate) fn value_residual(&self, beta: &[f64], eta: &[f64]) -> (f64, Vec<f64>) {
        let mut s = 0.0;
        let r = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let (v, g) = self.term.value_deriv(i, e);
                s += v;
                g
            })
            .collect();
        (self.scale * s + dot(&self.linear, beta), r)
    }

    pub(crate) fn residual(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter()
            .enumerate()
            .map(|(i, &e)| self.term.deriv(i, e))
            .collect()
    }

    pub(crate) fn grad_coord(&self, j: usize, residual: &[f64]) -> f64 {
        self.scale * dot(self.col(j), residual) + self.linear[j]
    }

    pub(crate) fn grad_full(&self, residual: &[f64]) -> Vec<f64> {
        (0..self.d).map(|j| self.grad_coord(j, residual)).collect()
    }

    /// Power-iteration estimate of the largest Hessian eigenvalue restricted
    /// to `coords`, evaluated at `eta`.
    pub(crate) fn curvature_bound(&self, eta: &[f64], coords: &[usize]) -> f64 {
        if coords.is_empty() || self.m == 0 {
            return 1.0;
        }
        let c: Vec<f64> = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| self.term.curvature(i, e).max(0.0))
            .collect();
        let mut v = vec![1.0 / (coords.len() as f64).sqrt(); coords.len()];
        let mut est = 0.0;
        for _ in 0..4 {
            let mut u = vec![0.0; self.m];
            for (k, &j) in coords.iter().enumerate() {
                if v[k] != 0.0 {
                    axpy(v[k], self.col(j), &mut u);
                }
            }
            for (ui, ci) in u.iter_mut().zip(&c) {
                *ui *= ci;
            }
            let w: Vec<f64> = coords.iter().map(|&j| self.scale * dot(self.col(j), &u)).collect();
            let norm = dot(&w, &w).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                break;
            }
            est = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        if est > 0.0 {
            est * 1.1
        } else {
            1.0
        }
    }

    pub(crate) fn clamp_count(&self, eta: &[f64]) -> usize {
        eta.iter()
            .enumerate()
            .filter(|&(i, &e)| self.term.clamped(i, e))
            .count()
    }
}

impl<T: RowTerm> SmoothLoss for Glm<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let eta = self.eta(beta);
        self.value_at(beta, &eta)
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let eta = self.eta(beta);
        self.grad_full(&self.residual(&eta))
    }
}

#[derive(Debug, Clone)]
pub struct SquaredTerm {
    y: Vec<f64>,
    w: Vec<f64>,
}

impl RowTerm for SquaredTerm {
    fn value(&self, i: usize, eta: f64) -> f64 {
        let r = self.y[i] - eta;
        self.w[i] * r * r
    }
    fn deriv(&self, i: usize, eta: f64) -> f64 {
        -2.0 * self.w[i] * (self.y[i] - eta)
    }
    fn curvature(&self, i: usize, _eta: f64) -> f64 {
        2.0 * self.w[i]
    }
}

#[derive(Debug, Clone)]
pub struct LogisticTerm {
    labels: Vec<f64>,
    offset: Vec<f64>,
}

pub(crate) fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl RowTerm for LogisticTerm {
    fn value(&self, i: usize, eta: f64) -> f64 {
        let u = eta + self.offset[i];
        softplus(u) - self.labels[i] * u
    }
    fn deriv(&self, i: usize, eta: f64) -> f64 {
        sigmoid(eta + self.offset[i]) - self.labels[i]
    }
    fn curvature(&self, i: usize, eta: f64) -> f64 {
        let p = sigmoid(eta + self.offset[i]);
        p * (1.0 - p)
    }
    fn value_deriv(&self, i: usize, eta: f64) -> (f64, f64) {
        let u = eta + self.offset[i];
        let e = (-u.abs()).exp();
        let (sp, p) = if u > 0.0 {
            (u + e.ln_1p(), 1.0 / (1.0 + e))
        } else {
            (e.ln_1p(), e / (1.0 + e))
        };
        (sp - self.labels[i] * u, p - self.labels[i])
    }
}

/// `weight * exp(-eta)` with the exponent clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
#[derive(Debug, Clone)]
pub struct ExpTerm {
    weight: f64,
}

impl RowTerm for ExpTerm {
    fn value(&self, _i: usize, eta: f64) -> f64 {
        self.weight * (-eta).clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    }
    fn deriv(&self, i: usize, eta: f64) -> f64 {
        if self.clamped(i, eta) {
            0.0
        } else {
            -self.weight * (-eta).exp()
        }
    }
    fn curvature(&self, i: usize, eta: f64) -> f64 {
        if self.clamped(i, eta) {
            0.0
        } else {
            self.weight * (-eta).exp()
        }
    }
    fn clamped(&self, _i: usize, eta: f64) -> bool {
        eta.abs() > EXP_CLAMP
    }
    fn value_deriv(&self, _i: usize, eta: f64) -> (f64, f64) {
        let v = self.weight * (-eta).clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        (v, if eta.abs() > EXP_CLAMP { 0.0 } else { -v })
    }
}

fn check_rows(x: ArrayView2<'_, f64>, len: usize, what: &str) -> Result<()> {
    if x.nrows() != len {
        return Err(Error::invalid(format!(
            "{what} has length {len} but the design has {} rows",
            x.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design matrix contains non-finite values"));
    }
    Ok(())
}

/// `(1/M) sum_i w_i (y_i - x_i' a)^2`.
pub fn least_squares_loss(x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64]) -> Result<Glm<SquaredTerm>> {
    check_rows(x, y.len(), "response")?;
    check_rows(x, weights.len(), "weights")?;
    if y.iter().chain(weights).any(|v| !v.is_finite()) {
        return Err(Error::invalid("least squares inputs must be finite"));
    }
    let m = y.len();
    let rows: Vec<usize> = (0..m).collect();
    let term = SquaredTerm {
        y: y.to_vec(),
        w: weights.to_vec(),
    };
    Ok(Glm::new(x, &rows, term, vec![0.0; x.ncols()], 1.0 / m as f64))
}

/// `(1/M) sum_i [log(1 + exp(x_i' b + o_i)) - G_i (x_i' b + o_i)]`.
pub fn offset_logistic_loss(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    offset: &[f64],
) -> Result<Glm<LogisticTerm>> {
    check_rows(x, labels.len(), "labels")?;
    check_rows(x, offset.len(), "offset")?;
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("logistic labels must be 0 or 1"));
    }
    if offset.iter().any(|o| !o.is_finite()) {
        return Err(Error::invalid("offset contains non-finite values"));
    }
    let m = labels.len();
    let rows: Vec<usize> = (0..m).collect();
    let term = LogisticTerm {
        labels: labels.iter().map(|&l| f64::from(l)).collect(),
        offset: offset.to_vec(),
    };
    Ok(Glm::new(x, &rows, term, vec![0.0; x.ncols()], 1.0 / m as f64))
}

/// `(1/M) sum_i [(1 - G_i) x_i' b + (G_i / gamma_hat) exp(-x_i' b)]`.
///
/// Unlabeled rows enter only through the linear term, so the nonlinear part
/// is stored for the `G_i = 1` rows alone.
pub fn tbr_beta_loss(x: ArrayView2<'_, f64>, gamma: &[u8], gamma_hat: f64) -> Result<Glm<ExpTerm>> {
    check_rows(x, gamma.len(), "gamma")?;
    if gamma.iter().any(|&g| g > 1) {
        return Err(Error::invalid("gamma must be 0 or 1"));
    }
    if !(gamma_hat > 0.0 && gamma_hat < 1.0) {
        return Err(Error::invalid(format!("gamma_hat = {gamma_hat} must lie in (0, 1)")));
    }
    let m = gamma.len();
    let d = x.ncols();
    let scale = 1.0 / m as f64;
    let mut linear = vec![0.0; d];
    let mut labeled = Vec::new();
    for (i, &g) in gamma.iter().enumerate() {
        if g == 1 {
            labeled.push(i);
        } else {
            for (c, v) in linear.iter_mut().zip(x.row(i)) {
                *c += v;
            }
        }
    }
    linear.iter_mut().for_each(|c| *c *= scale);
    let term = ExpTerm {
        weight: 1.0 / gamma_hat,
    };
    Ok(Glm::new(x, &labeled, term, linear, scale))
}

/// Tilting weights `(G_i / gamma_hat) exp(-x_i' beta_hat)`, exponent clamped.
pub fn tbr_alpha_weights(x: ArrayView2<'_, f64>, gamma: &[u8], gamma_hat: f64, beta_hat: &[f64]) -> Vec<f64> {
    gamma
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            if g == 1 {
                let eta = dot(x.row(i).as_slice().unwrap_or(&x.row(i).to_vec()), beta_hat);
                (-eta).clamp(-EXP_CLAMP, EXP_CLAMP).exp() / gamma_hat
            } else {
                0.0
            }
        })
        .collect()
}

/// `(1/M) sum_i (G_i / gamma_hat) exp(-x_i' beta_hat) (y_i - x_i' a)^2`.
/// Outcomes on rows with `G_i = 0` are never read.
pub fn tbr_alpha_loss(
    x: ArrayView2<'_, f64>,
    gamma: &[u8],
    outcome: &[f64],
    gamma_hat: f64,
    beta_hat: &[f64],
) -> Result<Glm<SquaredTerm>> {
    check_rows(x, gamma.len(), "gamma")?;
    check_rows(x, outcome.len(), "outcome")?;
    if beta_hat.len() != x.ncols() || beta_hat.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta_hat must be finite with one entry per column"));
    }
    let m = gamma.len();
    let weights = tbr_alpha_weights(x, gamma, gamma_hat, beta_hat);
    let labeled: Vec<usize> = (0..m).filter(|&i| gamma[i] == 1).collect();
    let term = SquaredTerm {
        y: labeled.iter().map(|&i| outcome[i]).collect(),
        w: labeled.iter().map(|&i| weights[i]).collect(),
    };
    if term.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("labeled outcomes must be finite"));
    }
    Ok(Glm::new(x, &labeled, term, vec![0.0; x.ncols()], 1.0 / m as f64))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let n = a.len().min(b.len());
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
