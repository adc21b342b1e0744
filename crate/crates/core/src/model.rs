//! Domain types shared by the solvers, nuisance learners and estimators.
//!
//! A [`Dataset`] holds `N` samples of `(R, T, R*Y, X)`: the covariates always,
//! the treatment always (or only where `R_T = 1` when a treatment label is
//! supplied), and the outcome only where its label is one. The outcome is
//! stored with an explicit missing marker and every read is guarded.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Treatment arm `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_index(j: usize) -> Option<Arm> {
        match j {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    /// Whether a unit with treatment value `t` belongs to this arm.
    pub fn matches(self, t: u8) -> bool {
        match self {
            Arm::Treated => t == 1,
            Arm::Control => t == 0,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: Array2<f64>,
    treatment: Vec<u8>,
    outcome_label: Vec<u8>,
    treatment_label: Option<Vec<u8>>,
    outcome: Vec<Option<f64>>,
}

fn check_binary(name: &str, v: &[u8]) -> Result<()> {
    match v.iter().position(|&b| b > 1) {
        Some(i) => Err(Error::invalid(format!(
            "{name}[{i}] = {} is not binary",
            v[i]
        ))),
        None => Ok(()),
    }
}

impl Dataset {
    /// Builds a dataset. Outcomes supplied for rows whose outcome label is
    /// zero are discarded; a missing outcome on a labeled row is an error.
    pub fn new(
        covariates: Array2<f64>,
        treatment: Vec<u8>,
        outcome_label: Vec<u8>,
        treatment_label: Option<Vec<u8>>,
        outcome: Vec<Option<f64>>,
    ) -> Result<Self> {
        let (n, d) = covariates.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid("dataset needs N >= 1 rows and d >= 1 columns"));
        }
        let lens = [
            ("treatment", treatment.len()),
            ("outcome_label", outcome_label.len()),
            ("outcome", outcome.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::invalid(format!("{name} has length {len}, expected {n}")));
            }
        }
        if let Some(rt) = &treatment_label {
            if rt.len() != n {
                return Err(Error::invalid(format!(
                    "treatment_label has length {}, expected {n}",
                    rt.len()
                )));
            }
            check_binary("treatment_label", rt)?;
        }
        check_binary("outcome_label", &outcome_label)?;
        for i in 0..n {
            let t_observed = treatment_label.as_ref().is_none_or(|rt| rt[i] == 1);
            if t_observed && treatment[i] > 1 {
                return Err(Error::invalid(format!(
                    "treatment[{i}] = {} is not binary",
                    treatment[i]
                )));
            }
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates contain non-finite values"));
        }
        let mut outcome = outcome;
        for (i, y) in outcome.iter_mut().enumerate() {
            if outcome_label[i] == 0 {
                *y = None;
            } else {
                match y {
                    None => {
                        return Err(Error::invalid(format!(
                            "outcome missing on labeled row {i}"
                        )))
                    }
                    Some(v) if !v.is_finite() => {
                        return Err(Error::invalid(format!("outcome[{i}] is not finite")))
                    }
                    _ => {}
                }
            }
        }
        Ok(Dataset {
            covariates,
            treatment,
            outcome_label,
            treatment_label,
            outcome,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    /// Row `i` as a contiguous slice (covariates are stored row-major).
    pub fn row_slice(&self, i: usize) -> &[f64] {
        self.covariates
            .row(i)
            .to_slice()
            .expect("covariates are stored in standard layout")
    }

    pub fn outcome_label(&self, i: usize) -> u8 {
        self.outcome_label[i]
    }

    pub fn treatment_label(&self, i: usize) -> Option<u8> {
        self.treatment_label.as_ref().map(|rt| rt[i])
    }

    pub fn has_treatment_label(&self) -> bool {
        self.treatment_label.is_some()
    }

    /// Treatment of unit `i`, or `None` when it is unobserved.
    pub fn treatment(&self, i: usize) -> Option<u8> {
        match self.treatment_label(i) {
            Some(0) => None,
            _ => Some(self.treatment[i]),
        }
    }

    /// `R_i` times `R_{T,i}` when treatment labels are present.
    pub fn effective_label(&self, i: usize) -> u8 {
        self.outcome_label[i] * self.treatment_label(i).unwrap_or(1)
    }

    /// Guarded outcome read.
    pub fn outcome(&self, i: usize) -> Result<f64> {
        if self.effective_label(i) == 0 {
            return Err(Error::ContractViolation(format!(
                "outcome of row {i} read while unlabeled"
            )));
        }
        self.outcome[i].ok_or_else(|| {
            Error::ContractViolation(format!("outcome of row {i} is missing"))
        })
    }

    /// Raw optional outcome, `None` wherever the outcome label is zero.
    pub fn outcome_raw(&self, i: usize) -> Option<f64> {
        self.outcome[i]
    }

    /// Sub-dataset of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            covariates: self.covariates.select(Axis(0), rows),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome_label: rows.iter().map(|&i| self.outcome_label[i]).collect(),
            treatment_label: self
                .treatment_label
                .as_ref()
                .map(|rt| rows.iter().map(|&i| rt[i]).collect()),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }

    /// Copy with outcomes replaced by `f(i, y)` on labeled rows.
    pub fn map_outcomes(&self, mut f: impl FnMut(usize, f64) -> f64) -> Dataset {
        let mut out = self.clone();
        for (i, y) in out.outcome.iter_mut().enumerate() {
            if let Some(v) = y {
                *v = f(i, *v);
            }
        }
        out
    }

    /// Copy with new covariates of the same shape.
    pub fn with_covariates(&self, covariates: Array2<f64>) -> Result<Dataset> {
        Dataset::new(
            covariates,
            self.treatment.clone(),
            self.outcome_label.clone(),
            self.treatment_label.clone(),
            self.outcome.clone(),
        )
    }

    pub fn product_indicator(&self, arm: Arm) -> ProductIndicator {
        build_product_indicator(self, arm)
    }
}

/// `Gamma^{(j)}`: the indicator that unit `i` is in arm `j` with its outcome
/// (and treatment, when labeled) observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductIndicator {
    pub arm: Arm,
    pub gamma: Vec<u8>,
}

impl ProductIndicator {
    pub fn mean(&self) -> f64 {
        self.count() as f64 / self.gamma.len() as f64
    }

    pub fn count(&self) -> usize {
        self.gamma.iter().filter(|&&g| g == 1).count()
    }

    pub fn count_in(&self, rows: &[usize]) -> usize {
        rows.iter().filter(|&&i| self.gamma[i] == 1).count()
    }
}

pub fn build_product_indicator(dataset: &Dataset, arm: Arm) -> ProductIndicator {
    let gamma = (0..dataset.n())
        .map(|i| {
            if dataset.effective_label(i) == 0 {
                return 0;
            }
            // treatment is observed whenever the effective label is one
            match dataset.treatment(i) {
                Some(t) if arm.matches(t) => 1,
                _ => 0,
            }
        })
        .collect();
    ProductIndicator { arm, gamma }
}

/// A partition of `0..n` into `k` folds; fold labels are `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    n: usize,
    k: usize,
    assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn from_assignment(k: usize, assignment: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        if let Some(&bad) = assignment.iter().find(|&&f| f >= k) {
            return Err(Error::invalid(format!("fold label {bad} out of range for k = {k}")));
        }
        Ok(FoldAssignment {
            n: assignment.len(),
            k,
            assignment,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] == f).collect()
    }

    /// Indices outside fold `f`.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] != f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Uniform random partition of `0..n` into `k` folds. Sizes differ by at most
/// one, with the remainder going to the lowest-numbered folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("k = {k} folds; need k >= 2")));
    }
    if n < k {
        return Err(Error::invalid(format!("cannot split n = {n} samples into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, 0xF01D));
    let base = n / k;
    let rem = n % k;
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < rem);
        for &i in &perm[pos..pos + size] {
            assignment[i] = f;
        }
        pos += size;
    }
    Ok(FoldAssignment { n, k, assignment })
}

/// Plug-in effective overlap `[mean(1 / gamma_i)]^{-1}`.
pub fn effective_overlap(ps_values: &[f64]) -> Result<f64> {
    if ps_values.is_empty() {
        return Err(Error::invalid("effective_overlap of an empty vector"));
    }
    if let Some(v) = ps_values.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("propensity value {v} is not positive")));
    }
    let mean_inv = ps_values.iter().map(|v| 1.0 / v).sum::<f64>() / ps_values.len() as f64;
    Ok(1.0 / mean_inv)
}

/// Propensity floor for a dataset of `n` samples.
pub fn propensity_floor(n: usize) -> f64 {
    1.0 / (2.0 * n as f64)
}

/// A map `x -> f(x)` over covariate rows.
pub type CovariateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Analytic nuisance functions, available in simulations only.
pub trait NuisanceOracle: Send + Sync {
    /// `m(j, x) = E[Y(j) | X = x]`.
    fn outcome_regression(&self, arm: Arm, x: &[f64]) -> f64;
    /// `gamma_N(j, x) = P(Gamma^{(j)} = 1 | X = x)`.
    fn product_propensity(&self, arm: Arm, x: &[f64]) -> f64;
    /// `theta_j = E[Y(j)]`.
    fn counterfactual_mean(&self, arm: Arm) -> f64;
}

/// Fitted (or oracle) pair `(m(j, .), gamma_N(j, .))` for one arm.
#[derive(Clone)]
pub struct NuisanceEstimate {
    pub arm: Arm,
    pub or_fn: CovariateFn,
    pub ps_fn: CovariateFn,
    pub ps_floor: f64,
    pub method_tag: String,
    pub or_coefficients: Option<Vec<f64>>,
    pub ps_coefficients: Option<Vec<f64>>,
    pub lambda_or: Option<f64>,
    pub lambda_ps: Option<f64>,
    /// Solver fits behind this estimate that stopped short of the KKT tolerance
    /// or hit the exponent clamp.
    pub degraded_fits: usize,
}

impl fmt::Debug for NuisanceEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceEstimate")
            .field("arm", &self.arm)
            .field("method_tag", &self.method_tag)
            .field("ps_floor", &self.ps_floor)
            .field("or_coefficients", &self.or_coefficients)
            .field("ps_coefficients", &self.ps_coefficients)
            .field("lambda_or", &self.lambda_or)
            .field("lambda_ps", &self.lambda_ps)
            .finish()
    }
}

impl NuisanceEstimate {
    pub fn outcome(&self, x: &[f64]) -> f64 {
        (self.or_fn)(x)
    }

    /// Propensity clipped to `[ps_floor, 1]`, and whether the clip was active.
    pub fn propensity_clipped(&self, x: &[f64]) -> (f64, bool) {
        let raw = (self.ps_fn)(x);
        if raw.is_nan() {
            return (raw, false);
        }
        if raw < self.ps_floor {
            (self.ps_floor, true)
        } else if raw > 1.0 {
            (1.0, true)
        } else {
            (raw, false)
        }
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        self.propensity_clipped(x).0
    }
}

/// Estimate of one counterfactual mean with its per-sample influence values.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmEstimate {
    pub arm: Arm,
    pub theta_hat: f64,
    /// Plug-in influence values, centered at zero.
    pub influence: Vec<f64>,
    pub sigma_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Empirical product-indicator means, indexed by arm.
    pub gamma_bar: [f64; 2],
    /// Effective-overlap estimates, indexed by arm.
    pub a_hat: [f64; 2],
    pub effective_sample_size: f64,
    pub ps_floor: f64,
    /// Propensity evaluations that hit the floor, indexed by arm.
    pub clip_counts: [usize; 2],
    pub degraded_fits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub n: usize,
    pub ci_level: f64,
    pub ci: (f64, f64),
    /// Arm estimates, indexed by [`Arm::index`].
    pub arms: [ArmEstimate; 2],
    pub diagnostics: Diagnostics,
}

impl AteReport {
    pub fn arm(&self, arm: Arm) -> &ArmEstimate {
        &self.arms[arm.index()]
    }

    pub fn standard_error(&self) -> f64 {
        (self.sigma_hat / self.n as f64).sqrt()
    }

    pub fn ci_length(&self) -> f64 {
        self.ci.1 - self.ci.0
    }
}
