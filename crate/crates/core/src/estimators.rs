//! The cross-fitted doubly robust estimator and its bias-reduced variant with
//! asymmetric cross-fitting, plus plug-in variances and normal intervals.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{
    effective_overlap, make_folds, propensity_floor, Arm, ArmEstimate, AteReport, Dataset, Diagnostics,
    FoldAssignment,
};
use crate::nuisance::{choose_lambda, fit_nuisance, logistic, LambdaPolicy, LearnerSpec};
use crate::rng::derive_seed;
use crate::solvers::{fit_tbr_alpha, fit_tbr_beta, tbr_alpha_weights, CvProblem, SolverConfig};

/// `estimate +/- z * sqrt(sigma_hat / n)` with `z` the normal quantile at `(1 + level) / 2`.
pub fn ci_from(estimate: f64, sigma_hat: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} must lie in (0, 1)")));
    }
    if !(sigma_hat >= 0.0) || n == 0 {
        return Err(Error::invalid("variance must be nonnegative and n positive"));
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let half = z * (sigma_hat / n as f64).sqrt();
    Ok((estimate - half, estimate + half))
}

/// Cross-fitted nuisance values: row `i` holds the fits trained without its fold.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFit {
    pub arm: Arm,
    pub or_values: Vec<f64>,
    /// Propensities after clipping to `[floor, 1]`.
    pub ps_values: Vec<f64>,
    pub clip_count: usize,
    pub degraded_fits: usize,
}

pub fn cross_fit_nuisances(
    dataset: &Dataset,
    arm: Arm,
    folds: &FoldAssignment,
    learner: &LearnerSpec,
    seed: u64,
) -> Result<CrossFit> {
    let n = dataset.n();
    if folds.n() != n {
        return Err(Error::invalid(format!(
            "fold assignment covers {} rows, dataset has {n}",
            folds.n()
        )));
    }
    let gamma = dataset.product_indicator(arm).gamma;
    let mut or_values = vec![0.0; n];
    let mut ps_values = vec![0.0; n];
    let mut clip_count = 0;
    let mut degraded_fits = 0;
    for k in 0..folds.k() {
        if !folds.complement(k).iter().any(|&i| gamma[i] == 1) {
            return Err(Error::EmptyArmFold { fold: k, arm });
        }
    }
    for k in 0..folds.k() {
        let train = folds.complement(k);
        let fit = fit_nuisance(dataset, arm, &train, learner, derive_seed(seed, (k * 2 + arm.index()) as u64))?;
        degraded_fits += fit.degraded_fits;
        for i in folds.fold(k) {
            let x = dataset.row_slice(i);
            or_values[i] = fit.outcome(x);
            let (p, clipped) = fit.propensity_clipped(x);
            ps_values[i] = p;
            clip_count += usize::from(clipped);
        }
    }
    if or_values.iter().chain(&ps_values).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite nuisance value in arm {arm}")));
    }
    Ok(CrossFit {
        arm,
        or_values,
        ps_values,
        clip_count,
        degraded_fits,
    })
}

/// `theta = mean[m_i + Gamma_i / gamma_i (Y_i - m_i)]` from given nuisance values.
/// Outcomes are read only where `Gamma_i = 1`.
pub fn dr_arm_from_values(dataset: &Dataset, arm: Arm, or_values: &[f64], ps_values: &[f64]) -> Result<ArmEstimate> {
    let n = dataset.n();
    if or_values.len() != n || ps_values.len() != n {
        return Err(Error::invalid("nuisance values must have one entry per row"));
    }
    let gamma = dataset.product_indicator(arm).gamma;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let m = or_values[i];
        let t = if gamma[i] == 1 {
            m + (dataset.outcome(i)? - m) / ps_values[i]
        } else {
            m
        };
        terms.push(t);
    }
    Ok(centered(arm, terms))
}

fn centered(arm: Arm, terms: Vec<f64>) -> ArmEstimate {
    let n = terms.len() as f64;
    let theta_hat = terms.iter().sum::<f64>() / n;
    let influence: Vec<f64> = terms.into_iter().map(|t| t - theta_hat).collect();
    let sigma_hat = influence.iter().map(|v| v * v).sum::<f64>() / n;
    ArmEstimate {
        arm,
        theta_hat,
        influence,
        sigma_hat,
    }
}

/// Cross-fitted doubly robust estimate of `theta_j = E[Y(j)]`.
pub fn dr_dmar_arm(
    dataset: &Dataset,
    arm: Arm,
    folds: &FoldAssignment,
    learner: &LearnerSpec,
    seed: u64,
) -> Result<ArmEstimate> {
    let cf = cross_fit_nuisances(dataset, arm, folds, learner, seed)?;
    dr_arm_from_values(dataset, arm, &cf.or_values, &cf.ps_values)
}

fn joint_variance(a1: &ArmEstimate, a0: &ArmEstimate) -> f64 {
    let n = a1.influence.len() as f64;
    a1.influence
        .iter()
        .zip(&a0.influence)
        .map(|(p1, p0)| (p1 - p0) * (p1 - p0))
        .sum::<f64>()
        / n
}

fn gamma_bars(dataset: &Dataset) -> [f64; 2] {
    [Arm::Control, Arm::Treated].map(|a| dataset.product_indicator(a).mean())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrSettings {
    pub k_folds: usize,
    pub n_repeats: usize,
    pub level: f64,
}

impl Default for DrSettings {
    fn default() -> Self {
        DrSettings {
            k_folds: 2,
            n_repeats: 1,
            level: 0.95,
        }
    }
}

/// Cross-fitted doubly robust ATE. With several repeats, point estimates,
/// variances and influence values are averaged over fresh fold draws.
pub fn dr_dmar_ate(dataset: &Dataset, learner: &LearnerSpec, settings: &DrSettings, seed: u64) -> Result<AteReport> {
    if settings.n_repeats == 0 {
        return Err(Error::invalid("n_repeats must be at least 1"));
    }
    let n = dataset.n();
    let reps = settings.n_repeats as f64;
    let mut theta = [0.0; 2];
    let mut arm_sigma = [0.0; 2];
    let mut sigma = 0.0;
    let mut infl = [vec![0.0; n], vec![0.0; n]];
    let mut a_hat = [0.0; 2];
    let mut clip_counts = [0usize; 2];
    let mut degraded = 0;
    for r in 0..settings.n_repeats {
        let folds = make_folds(n, settings.k_folds, derive_seed(seed, r as u64))?;
        let fit_seed = derive_seed(seed, 1000 + r as u64);
        let mut arms = Vec::with_capacity(2);
        for arm in Arm::BOTH {
            let cf = cross_fit_nuisances(dataset, arm, &folds, learner, fit_seed)?;
            let est = dr_arm_from_values(dataset, arm, &cf.or_values, &cf.ps_values)?;
            let j = arm.index();
            a_hat[j] += effective_overlap(&cf.ps_values)? / reps;
            clip_counts[j] += cf.clip_count;
            degraded += cf.degraded_fits;
            arms.push(est);
        }
        sigma += joint_variance(&arms[1], &arms[0]) / reps;
        for est in arms {
            let j = est.arm.index();
            theta[j] += est.theta_hat / reps;
            arm_sigma[j] += est.sigma_hat / reps;
            for (acc, v) in infl[j].iter_mut().zip(&est.influence) {
                *acc += v / reps;
            }
        }
    }
    let [infl0, infl1] = infl;
    let arms = [
        ArmEstimate {
            arm: Arm::Control,
            theta_hat: theta[0],
            influence: infl0,
            sigma_hat: arm_sigma[0],
        },
        ArmEstimate {
            arm: Arm::Treated,
            theta_hat: theta[1],
            influence: infl1,
            sigma_hat: arm_sigma[1],
        },
    ];
    build_report(dataset, arms, sigma, settings.level, a_hat, clip_counts, degraded)
}

fn build_report(
    dataset: &Dataset,
    arms: [ArmEstimate; 2],
    sigma_hat: f64,
    level: f64,
    a_hat: [f64; 2],
    clip_counts: [usize; 2],
    degraded_fits: usize,
) -> Result<AteReport> {
    let n = dataset.n();
    let mu_hat = arms[1].theta_hat - arms[0].theta_hat;
    if !mu_hat.is_finite() || !sigma_hat.is_finite() {
        return Err(Error::Numerical("non-finite ATE estimate or variance".into()));
    }
    let ci = ci_from(mu_hat, sigma_hat, n, level)?;
    Ok(AteReport {
        mu_hat,
        sigma_hat,
        n,
        ci_level: level,
        ci,
        arms,
        diagnostics: Diagnostics {
            gamma_bar: gamma_bars(dataset),
            a_hat,
            effective_sample_size: n as f64 * a_hat[0].min(a_hat[1]),
            ps_floor: propensity_floor(n),
            clip_counts,
            degraded_fits,
        },
    })
}

/// Per-half fits and cross-fitted values behind one bias-reduced arm estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BrssArm {
    pub estimate: ArmEstimate,
    /// `theta^{(1)}`, `theta^{(2)}` (0-based here).
    pub half_thetas: [f64; 2],
    pub gamma_hat: [f64; 2],
    pub alpha: [Vec<f64>; 2],
    pub beta: [Vec<f64>; 2],
    pub lambda_alpha: [f64; 2],
    pub lambda_beta: [f64; 2],
    /// `x_i' alpha` from the opposite half.
    pub or_values: Vec<f64>,
    /// `g(x_i' beta + log gamma_hat)` from the own half, clipped.
    pub ps_values: Vec<f64>,
    /// Variance at the averaged nuisances; `terms_bar - theta_hat` per row.
    pub variance_terms: Vec<f64>,
    pub clip_count: usize,
    pub degraded_fits: usize,
}

/// Settings shared by both arms of the bias-reduced estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct BrssSettings {
    /// `Fixed { or, ps }` maps to `(lambda_alpha, lambda_beta)`.
    pub lambda_policy: LambdaPolicy,
    pub solver: SolverConfig,
    pub level: f64,
}

impl Default for BrssSettings {
    fn default() -> Self {
        BrssSettings {
            lambda_policy: LambdaPolicy::default(),
            solver: SolverConfig::default(),
            level: 0.95,
        }
    }
}

struct HalfFit {
    gamma_hat: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    lambda_alpha: f64,
    lambda_beta: f64,
    degraded: usize,
}

fn fit_half(
    dataset: &Dataset,
    rows: &[usize],
    gamma: &[u8],
    settings: &BrssSettings,
    seed: u64,
) -> Result<HalfFit> {
    let x = dataset.covariates().select(ndarray::Axis(0), rows);
    let g: Vec<u8> = rows.iter().map(|&i| gamma[i]).collect();
    let m = g.len();
    let ones = g.iter().filter(|&&v| v == 1).count();
    let gamma_hat = ones as f64 / m as f64;
    let (fixed_alpha, fixed_beta) = match settings.lambda_policy {
        LambdaPolicy::Fixed { or, ps } => (Some(or), Some(ps)),
        LambdaPolicy::Cv(_) => (None, None),
    };
    let solver = &settings.solver;

    let beta_problem = CvProblem::TbrBeta {
        x: x.view(),
        gamma: &g,
        gamma_hat,
    };
    let lambda_beta = choose_lambda(
        &beta_problem,
        ones.min(m - ones),
        &settings.lambda_policy,
        fixed_beta,
        solver,
        derive_seed(seed, 21),
    )?;
    let beta_fit = fit_tbr_beta(x.view(), &g, gamma_hat, lambda_beta, solver)?;
    let beta = beta_fit.coefficients.clone();

    // Outcomes are read only on labeled rows; others carry a NaN placeholder.
    let y: Vec<f64> = rows
        .iter()
        .map(|&i| if gamma[i] == 1 { dataset.outcome(i) } else { Ok(f64::NAN) })
        .collect::<Result<_>>()?;
    let w = tbr_alpha_weights(x.view(), &g, gamma_hat, &beta);
    let labeled: Vec<usize> = (0..m).filter(|&r| g[r] == 1).collect();
    let scale = labeled.len() as f64 / m as f64;
    let xl = x.select(ndarray::Axis(0), &labeled);
    let yl: Vec<f64> = labeled.iter().map(|&r| y[r]).collect();
    let wl: Vec<f64> = labeled.iter().map(|&r| w[r] * scale).collect();
    let alpha_problem = CvProblem::LeastSquares {
        x: xl.view(),
        y: &yl,
        weights: &wl,
    };
    let lambda_alpha = choose_lambda(
        &alpha_problem,
        labeled.len(),
        &settings.lambda_policy,
        fixed_alpha,
        solver,
        derive_seed(seed, 22),
    )?;
    let alpha_fit = fit_tbr_alpha(x.view(), &g, &y, gamma_hat, &beta, lambda_alpha, solver)?;
    Ok(HalfFit {
        gamma_hat,
        degraded: usize::from(beta_fit.degraded()) + usize::from(alpha_fit.degraded()),
        alpha: alpha_fit.coefficients,
        beta,
        lambda_alpha,
        lambda_beta,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bias-reduced estimate of `theta_j` over the two halves of `halves`.
pub fn brss_arm_with_halves(
    dataset: &Dataset,
    arm: Arm,
    halves: &FoldAssignment,
    settings: &BrssSettings,
    seed: u64,
) -> Result<BrssArm> {
    let n = dataset.n();
    if halves.k() != 2 || halves.n() != n {
        return Err(Error::invalid("the bias-reduced estimator needs a two-way split of all rows"));
    }
    let gamma = dataset.product_indicator(arm).gamma;
    let floor = propensity_floor(n);
    let parts = [halves.fold(0), halves.fold(1)];
    let mut fits = Vec::with_capacity(2);
    for (k, rows) in parts.iter().enumerate() {
        let ones = rows.iter().filter(|&&i| gamma[i] == 1).count();
        if ones == 0 {
            return Err(Error::EmptyArmFold { fold: k, arm });
        }
        if ones == rows.len() {
            return Err(Error::degenerate(format!(
                "half {k} has no unlabeled rows in arm {arm}"
            )));
        }
        fits.push(fit_half(dataset, rows, &gamma, settings, derive_seed(seed, (k * 2 + arm.index()) as u64))?);
    }

    let clip = |p: f64| -> (f64, bool) {
        if p < floor {
            (floor, true)
        } else {
            (p, false)
        }
    };
    let mut or_values = vec![0.0; n];
    let mut ps_values = vec![0.0; n];
    let mut terms = vec![0.0; n];
    let mut clip_count = 0;
    let mut half_thetas = [0.0; 2];
    for (k, rows) in parts.iter().enumerate() {
        let own = &fits[k];
        let other = &fits[1 - k];
        let offset = own.gamma_hat.ln();
        let mut sum = 0.0;
        for &i in rows {
            let x = dataset.row_slice(i);
            let m = dot(x, &other.alpha);
            let (p, c) = clip(logistic(dot(x, &own.beta) + offset));
            clip_count += usize::from(c);
            let t = if gamma[i] == 1 {
                m + (dataset.outcome(i)? - m) / p
            } else {
                m
            };
            or_values[i] = m;
            ps_values[i] = p;
            terms[i] = t;
            sum += t;
        }
        half_thetas[k] = sum / rows.len() as f64;
    }
    let theta_hat = 0.5 * (half_thetas[0] + half_thetas[1]);
    // Centered within each half, so the values average to zero exactly.
    let influence: Vec<f64> = (0..n).map(|i| terms[i] - half_thetas[halves.fold_of(i)]).collect();

    let alpha_bar: Vec<f64> = fits[0].alpha.iter().zip(&fits[1].alpha).map(|(a, b)| 0.5 * (a + b)).collect();
    let beta_bar: Vec<f64> = fits[0].beta.iter().zip(&fits[1].beta).map(|(a, b)| 0.5 * (a + b)).collect();
    let gamma_bar = 0.5 * (fits[0].gamma_hat + fits[1].gamma_hat);
    let offset_bar = gamma_bar.ln();
    let mut variance_terms = vec![0.0; n];
    for (i, v) in variance_terms.iter_mut().enumerate() {
        let x = dataset.row_slice(i);
        let m = dot(x, &alpha_bar);
        let t = if gamma[i] == 1 {
            let (p, _) = clip(logistic(dot(x, &beta_bar) + offset_bar));
            m + (dataset.outcome(i)? - m) / p
        } else {
            m
        };
        *v = t - theta_hat;
    }
    let sigma_hat = variance_terms.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !theta_hat.is_finite() || !sigma_hat.is_finite() {
        return Err(Error::Numerical(format!("non-finite bias-reduced estimate in arm {arm}")));
    }
    Ok(BrssArm {
        estimate: ArmEstimate {
            arm,
            theta_hat,
            influence,
            sigma_hat,
        },
        half_thetas,
        gamma_hat: [fits[0].gamma_hat, fits[1].gamma_hat],
        lambda_alpha: [fits[0].lambda_alpha, fits[1].lambda_alpha],
        lambda_beta: [fits[0].lambda_beta, fits[1].lambda_beta],
        degraded_fits: fits[0].degraded + fits[1].degraded,
        alpha: [fits[0].alpha.clone(), fits[1].alpha.clone()],
        beta: [fits[0].beta.clone(), fits[1].beta.clone()],
        or_values,
        ps_values,
        variance_terms,
        clip_count,
    })
}

/// Bias-reduced estimate of `theta_j` with halves drawn from `seed`.
pub fn brss_arm(dataset: &Dataset, arm: Arm, settings: &BrssSettings, seed: u64) -> Result<BrssArm> {
    let halves = make_folds(dataset.n(), 2, derive_seed(seed, 0))?;
    brss_arm_with_halves(dataset, arm, &halves, settings, derive_seed(seed, 1))
}

/// Bias-reduced ATE. The variance is the mean square of the arm-1 minus
/// arm-0 plug-in terms at the averaged nuisances.
pub fn brss_ate(dataset: &Dataset, settings: &BrssSettings, seed: u64) -> Result<AteReport> {
    let halves = make_folds(dataset.n(), 2, derive_seed(seed, 0))?;
    let fits = [
        brss_arm_with_halves(dataset, Arm::Control, &halves, settings, derive_seed(seed, 1))?,
        brss_arm_with_halves(dataset, Arm::Treated, &halves, settings, derive_seed(seed, 1))?,
    ];
    let n = dataset.n() as f64;
    let sigma = fits[1]
        .variance_terms
        .iter()
        .zip(&fits[0].variance_terms)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let a_hat = [effective_overlap(&fits[0].ps_values)?, effective_overlap(&fits[1].ps_values)?];
    let clip_counts = [fits[0].clip_count, fits[1].clip_count];
    let degraded = fits[0].degraded_fits + fits[1].degraded_fits;
    let [f0, f1] = fits;
    build_report(dataset, [f0.estimate, f1.estimate], sigma, settings.level, a_hat, clip_counts, degraded)
}
