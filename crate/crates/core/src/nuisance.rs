//! Nuisance learners: outcome regressions `m(j, .)` and product propensities
//! `gamma_N(j, .)` fitted on a set of training rows.

use std::sync::Arc;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{propensity_floor, Arm, CovariateFn, Dataset, NuisanceEstimate, NuisanceOracle};
use crate::rng::derive_seed;
use crate::solvers::{
    cross_validate_lambda, fit_lasso_ls, fit_logistic_l1_offset, lambda_grid, CvProblem, SolverConfig,
    SolverResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrMethod {
    LassoLinear,
    Oracle,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsMethod {
    /// Logistic model for `Gamma^{(j)}` with offset `log(mean Gamma)`.
    OffsetLogisticDirect,
    /// Offset logistic labeling model times a logistic treatment model.
    ProductTwoLogistic,
    /// Labeling treated as completely at random.
    ConstantMcar,
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSettings {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub grid_ratio: f64,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            folds: 5,
            grid_len: 50,
            grid_ratio: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaPolicy {
    Cv(CvSettings),
    /// Fixed penalties for the outcome and propensity fits. The propensity
    /// level is shared by every logistic fit a method needs.
    Fixed { or: f64, ps: f64 },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Cv(CvSettings::default())
    }
}

#[derive(Clone)]
pub struct LearnerSpec {
    pub or_method: OrMethod,
    pub ps_method: PsMethod,
    pub lambda_policy: LambdaPolicy,
    pub solver: SolverConfig,
    /// Penalize the intercept of the lasso and logistic fits. Off by default,
    /// as in standard lasso and l1-logistic software.
    pub penalize_intercept: bool,
    /// Required by the oracle methods.
    pub oracle: Option<Arc<dyn NuisanceOracle>>,
}

impl std::fmt::Debug for LearnerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LearnerSpec")
            .field("or_method", &self.or_method)
            .field("ps_method", &self.ps_method)
            .field("lambda_policy", &self.lambda_policy)
            .field("penalize_intercept", &self.penalize_intercept)
            .field("oracle", &self.oracle.is_some())
            .finish()
    }
}

impl LearnerSpec {
    pub fn new(or_method: OrMethod, ps_method: PsMethod) -> Self {
        LearnerSpec {
            or_method,
            ps_method,
            lambda_policy: LambdaPolicy::default(),
            solver: SolverConfig::default(),
            penalize_intercept: false,
            oracle: None,
        }
    }

    /// Lasso outcome model with the direct offset-logistic propensity.
    pub fn ss_lasso() -> Self {
        Self::new(OrMethod::LassoLinear, PsMethod::OffsetLogisticDirect)
    }

    pub fn ss_product() -> Self {
        Self::new(OrMethod::LassoLinear, PsMethod::ProductTwoLogistic)
    }

    pub fn mcar() -> Self {
        Self::new(OrMethod::LassoLinear, PsMethod::ConstantMcar)
    }

    pub fn oracle(oracle: Arc<dyn NuisanceOracle>) -> Self {
        LearnerSpec {
            oracle: Some(oracle),
            ..Self::new(OrMethod::Oracle, PsMethod::Oracle)
        }
    }

    pub fn with_lambda_policy(mut self, policy: LambdaPolicy) -> Self {
        self.lambda_policy = policy;
        self
    }

    fn oracle_ref(&self) -> Result<&Arc<dyn NuisanceOracle>> {
        self.oracle
            .as_ref()
            .ok_or_else(|| Error::invalid("oracle nuisance methods need a truth oracle"))
    }
}

/// A fitted covariate function with its provenance.
#[derive(Clone)]
pub struct FittedFn {
    pub f: CovariateFn,
    pub coefficients: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub degraded: usize,
}

impl FittedFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

fn linear_fn(coef: Vec<f64>) -> CovariateFn {
    Arc::new(move |x: &[f64]| dot(x, &coef))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn degraded(res: &SolverResult) -> usize {
    usize::from(res.degraded())
}

fn rows_of(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Picks a penalty for the given problem: a cross-validated grid value, or the
/// fixed level. With too few rows in the minority stratum for the requested
/// number of CV folds, the folds shrink; below two, the smallest grid value
/// is used.
pub(crate) fn choose_lambda(
    problem: &CvProblem<'_>,
    minority: usize,
    policy: &LambdaPolicy,
    fixed: Option<f64>,
    solver: &SolverConfig,
    seed: u64,
) -> Result<f64> {
    if let Some(l) = fixed {
        return Ok(l);
    }
    let LambdaPolicy::Cv(cv) = policy else {
        unreachable!("fixed policies handled above")
    };
    let lmax = problem.lambda_max(solver)?;
    let grid = lambda_grid(lmax, cv.grid_len, cv.grid_ratio);
    let folds = cv.folds.min(minority);
    if folds < 2 {
        return Ok(*grid.last().expect("grid is nonempty"));
    }
    Ok(cross_validate_lambda(problem, &grid, folds, seed, solver)?.lambda)
}

fn fixed_or(p: &LambdaPolicy) -> Option<f64> {
    match p {
        LambdaPolicy::Fixed { or, .. } => Some(*or),
        LambdaPolicy::Cv(_) => None,
    }
}

fn fixed_ps(p: &LambdaPolicy) -> Option<f64> {
    match p {
        LambdaPolicy::Fixed { ps, .. } => Some(*ps),
        LambdaPolicy::Cv(_) => None,
    }
}

/// Lasso of `Y` on `X` over the training rows with `Gamma^{(j)} = 1`, unit weights.
pub fn fit_or_lasso(
    dataset: &Dataset,
    arm: Arm,
    train: &[usize],
    policy: &LambdaPolicy,
    solver: &SolverConfig,
    seed: u64,
) -> Result<FittedFn> {
    let gamma = dataset.product_indicator(arm).gamma;
    let rows: Vec<usize> = train.iter().copied().filter(|&i| gamma[i] == 1).collect();
    if rows.is_empty() {
        return Err(Error::degenerate(format!(
            "no labeled rows in arm {arm} among the training rows"
        )));
    }
    let x = rows_of(dataset.covariates(), &rows);
    let y = rows.iter().map(|&i| dataset.outcome(i)).collect::<Result<Vec<f64>>>()?;
    let w = vec![1.0; rows.len()];
    let problem = CvProblem::LeastSquares {
        x: x.view(),
        y: &y,
        weights: &w,
    };
    let lambda = choose_lambda(&problem, rows.len(), policy, fixed_or(policy), solver, derive_seed(seed, 11))?;
    let res = fit_lasso_ls(x.view(), &y, &w, lambda, solver)?;
    Ok(FittedFn {
        degraded: degraded(&res),
        f: linear_fn(res.coefficients.clone()),
        coefficients: Some(res.coefficients),
        lambda: Some(lambda),
    })
}

/// Penalized offset-logistic fit of `labels` on the rows `x`; returns the
/// coefficients, penalty and degraded count.
fn offset_logistic(
    x: &Array2<f64>,
    labels: &[u8],
    offset: f64,
    policy: &LambdaPolicy,
    solver: &SolverConfig,
    seed: u64,
) -> Result<(Vec<f64>, f64, usize)> {
    let offsets = vec![offset; labels.len()];
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let minority = ones.min(labels.len() - ones);
    let problem = CvProblem::OffsetLogistic {
        x: x.view(),
        labels,
        offset: &offsets,
    };
    let lambda = choose_lambda(&problem, minority, policy, fixed_ps(policy), solver, seed)?;
    let res = fit_logistic_l1_offset(x.view(), labels, &offsets, lambda, solver)?;
    Ok((res.coefficients.clone(), lambda, degraded(&res)))
}

fn two_class(labels: &[u8], what: &str) -> Result<()> {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::degenerate(format!(
            "{what} takes a single value on the training rows"
        )));
    }
    Ok(())
}

/// `x -> g(x'b + log gamma_hat)` with `gamma_hat` the training mean of `Gamma^{(j)}`.
pub fn fit_ps_offset_logistic(
    dataset: &Dataset,
    arm: Arm,
    train: &[usize],
    policy: &LambdaPolicy,
    solver: &SolverConfig,
    seed: u64,
) -> Result<FittedFn> {
    let gamma = dataset.product_indicator(arm).gamma;
    let labels: Vec<u8> = train.iter().map(|&i| gamma[i]).collect();
    two_class(&labels, &format!("the arm-{arm} product indicator"))?;
    let gamma_hat = labels.iter().map(|&g| f64::from(g)).sum::<f64>() / labels.len() as f64;
    let offset = gamma_hat.ln();
    let x = rows_of(dataset.covariates(), train);
    let (coef, lambda, deg) = offset_logistic(&x, &labels, offset, policy, solver, derive_seed(seed, 12))?;
    let c = coef.clone();
    Ok(FittedFn {
        f: Arc::new(move |x: &[f64]| logistic(dot(x, &c) + offset)),
        coefficients: Some(coef),
        lambda: Some(lambda),
        degraded: deg,
    })
}

/// Treatment model `pi(1, x)` by l1 logistic regression of `T` on `X` over `rows`.
fn treatment_model(
    dataset: &Dataset,
    rows: &[usize],
    policy: &LambdaPolicy,
    solver: &SolverConfig,
    seed: u64,
) -> Result<(Vec<f64>, f64, usize)> {
    let t: Vec<u8> = rows
        .iter()
        .map(|&i| {
            dataset
                .treatment(i)
                .ok_or_else(|| Error::ContractViolation(format!("treatment of row {i} is unobserved")))
        })
        .collect::<Result<_>>()?;
    two_class(&t, "treatment")?;
    let x = rows_of(dataset.covariates(), rows);
    offset_logistic(&x, &t, 0.0, policy, solver, seed)
}

fn arm_probability(arm: Arm, p1: f64) -> f64 {
    match arm {
        Arm::Treated => p1,
        Arm::Control => 1.0 - p1,
    }
}

/// Product of an offset-logistic labeling model and a logistic treatment
/// model fitted on the labeled rows.
pub fn fit_ps_product(
    dataset: &Dataset,
    arm: Arm,
    train: &[usize],
    policy: &LambdaPolicy,
    solver: &SolverConfig,
    seed: u64,
) -> Result<FittedFn> {
    let r: Vec<u8> = train.iter().map(|&i| dataset.effective_label(i)).collect();
    two_class(&r, "the labeling indicator")?;
    let r_bar = r.iter().map(|&v| f64::from(v)).sum::<f64>() / r.len() as f64;
    let offset = r_bar.ln();
    let x = rows_of(dataset.covariates(), train);
    let (p_coef, lambda_p, deg_p) = offset_logistic(&x, &r, offset, policy, solver, derive_seed(seed, 13))?;
    let labeled: Vec<usize> = train.iter().copied().filter(|&i| dataset.effective_label(i) == 1).collect();
    let (t_coef, _, deg_t) = treatment_model(dataset, &labeled, policy, solver, derive_seed(seed, 14))?;
    let (pc, tc) = (p_coef.clone(), t_coef);
    Ok(FittedFn {
        f: Arc::new(move |x: &[f64]| logistic(dot(x, &pc) + offset) * arm_probability(arm, logistic(dot(x, &tc)))),
        coefficients: Some(p_coef),
        lambda: Some(lambda_p),
        degraded: deg_p + deg_t,
    })
}

/// `x -> mean(R) * pi(j, x)`, ignoring any dependence of labeling on `X` or `T`.
pub fn fit_ps_constant_mcar(
    dataset: &Dataset,
    arm: Arm,
    train: &[usize],
    policy: &LambdaPolicy,
    solver: &SolverConfig,
    seed: u64,
) -> Result<FittedFn> {
    if train.is_empty() {
        return Err(Error::degenerate("empty training slice"));
    }
    let r_bar = train.iter().map(|&i| f64::from(dataset.effective_label(i))).sum::<f64>() / train.len() as f64;
    if r_bar == 0.0 {
        return Err(Error::degenerate("no labeled rows on the training slice"));
    }
    let observed: Vec<usize> = train.iter().copied().filter(|&i| dataset.treatment(i).is_some()).collect();
    let (t_coef, lambda, deg) = treatment_model(dataset, &observed, policy, solver, derive_seed(seed, 15))?;
    let tc = t_coef.clone();
    Ok(FittedFn {
        f: Arc::new(move |x: &[f64]| r_bar * arm_probability(arm, logistic(dot(x, &tc)))),
        coefficients: Some(t_coef),
        lambda: Some(lambda),
        degraded: deg,
    })
}

/// Wraps the analytic nuisances of a simulation design.
pub fn oracle_nuisance(oracle: Arc<dyn NuisanceOracle>, arm: Arm, ps_floor: f64) -> NuisanceEstimate {
    let (o1, o2) = (oracle.clone(), oracle);
    NuisanceEstimate {
        arm,
        or_fn: Arc::new(move |x: &[f64]| o1.outcome_regression(arm, x)),
        ps_fn: Arc::new(move |x: &[f64]| o2.product_propensity(arm, x)),
        ps_floor,
        method_tag: "oracle".into(),
        or_coefficients: None,
        ps_coefficients: None,
        lambda_or: None,
        lambda_ps: None,
        degraded_fits: 0,
    }
}

/// Fits both nuisances of `arm` on `train` according to `spec`.
pub fn fit_nuisance(
    dataset: &Dataset,
    arm: Arm,
    train: &[usize],
    spec: &LearnerSpec,
    seed: u64,
) -> Result<NuisanceEstimate> {
    let floor = propensity_floor(dataset.n());
    let policy = &spec.lambda_policy;
    let solver = &SolverConfig {
        penalize_intercept: spec.penalize_intercept,
        ..spec.solver.clone()
    };
    let or = match spec.or_method {
        OrMethod::LassoLinear => fit_or_lasso(dataset, arm, train, policy, solver, seed)?,
        OrMethod::Zero => FittedFn {
            f: Arc::new(|_: &[f64]| 0.0),
            coefficients: None,
            lambda: None,
            degraded: 0,
        },
        OrMethod::Oracle => {
            let o = spec.oracle_ref()?.clone();
            FittedFn {
                f: Arc::new(move |x: &[f64]| o.outcome_regression(arm, x)),
                coefficients: None,
                lambda: None,
                degraded: 0,
            }
        }
    };
    let ps = match spec.ps_method {
        PsMethod::OffsetLogisticDirect => fit_ps_offset_logistic(dataset, arm, train, policy, solver, seed)?,
        PsMethod::ProductTwoLogistic => fit_ps_product(dataset, arm, train, policy, solver, seed)?,
        PsMethod::ConstantMcar => fit_ps_constant_mcar(dataset, arm, train, policy, solver, seed)?,
        PsMethod::Oracle => {
            let o = spec.oracle_ref()?.clone();
            FittedFn {
                f: Arc::new(move |x: &[f64]| o.product_propensity(arm, x)),
                coefficients: None,
                lambda: None,
                degraded: 0,
            }
        }
    };
    Ok(NuisanceEstimate {
        arm,
        or_fn: or.f,
        ps_fn: ps.f,
        ps_floor: floor,
        method_tag: format!("{:?}+{:?}", spec.or_method, spec.ps_method),
        or_coefficients: or.coefficients,
        ps_coefficients: ps.coefficients,
        lambda_or: or.lambda,
        lambda_ps: ps.lambda,
        degraded_fits: or.degraded + ps.degraded,
    })
}
