//! Data-generating processes (a)-(e) with their analytic nuisances.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{Arm, Dataset, NuisanceOracle};
use crate::nuisance::logistic;
use crate::rng::{derive_seed, stream_rng};

/// Lower end of the bracket searched for a calibrated intercept.
pub const CALIBRATION_LO: f64 = -30.0;
/// Upper end of the bracket searched for a calibrated intercept.
pub const CALIBRATION_HI: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DgpKind {
    /// Linear outcomes, logistic product propensities.
    A,
    /// Linear outcomes, sinusoidal treatment model.
    B,
    /// Quadratic outcomes, logistic product propensities.
    C,
    /// Fully labeled, linear outcomes, non-logistic treatment model.
    D,
    /// Fully labeled, quadratic outcomes, logistic treatment model.
    E,
}

impl DgpKind {
    pub fn fully_labeled(self) -> bool {
        matches!(self, DgpKind::D | DgpKind::E)
    }

    /// `(s_alpha, s_beta)` used by the reference simulation tables.
    pub fn table_sparsity(self) -> (usize, usize) {
        match self {
            DgpKind::B => (2, 6),
            DgpKind::C => (6, 2),
            DgpKind::A | DgpKind::D | DgpKind::E => (3, 3),
        }
    }
}

impl FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(DgpKind::A),
            "b" => Ok(DgpKind::B),
            "c" => Ok(DgpKind::C),
            "d" => Ok(DgpKind::D),
            "e" => Ok(DgpKind::E),
            other => Err(Error::invalid(format!("unknown DGP '{other}' (expected a, b, c, d or e)"))),
        }
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DgpKind::A => "a",
            DgpKind::B => "b",
            DgpKind::C => "c",
            DgpKind::D => "d",
            DgpKind::E => "e",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub dgp: DgpKind,
    pub n: usize,
    pub d: usize,
    pub s_alpha: usize,
    pub s_beta: usize,
    /// Target `E[Gamma^{(j)}]`, indexed by arm. Unused for the fully labeled designs.
    pub gamma_target: [f64; 2],
    /// Seed of the calibration sample.
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(dgp: DgpKind, n: usize, d: usize, s_alpha: usize, s_beta: usize, gamma: f64) -> Self {
        DgpSpec {
            dgp,
            n,
            d,
            s_alpha,
            s_beta,
            gamma_target: [gamma, gamma],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n must be at least 2"));
        }
        if self.dgp.fully_labeled() {
            if self.d < 2 {
                return Err(Error::invalid("d must be at least 2"));
            }
            return Ok(());
        }
        if self.d < 3 {
            return Err(Error::invalid("d must be at least 3"));
        }
        for (name, s) in [("s_alpha", self.s_alpha), ("s_beta", self.s_beta)] {
            if s < 2 || s > self.d - 1 {
                return Err(Error::invalid(format!(
                    "{name} = {s} must lie in [2, d - 1] = [2, {}]",
                    self.d - 1
                )));
            }
        }
        for g in self.gamma_target {
            validate_gamma(g)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_gamma(g: f64) -> Result<()> {
    if !(g > 0.0 && g <= 0.5) {
        return Err(Error::invalid(format!("gamma target {g} must lie in (0, 0.5]")));
    }
    Ok(())
}

/// Variance of a standard normal truncated to `(-2, 2)`: `1 - 4 phi(2) / (2 Phi(2) - 1)`.
pub fn truncated_normal_variance() -> f64 {
    let z = Normal::standard();
    1.0 - 4.0 * z.pdf(2.0) / (2.0 * z.cdf(2.0) - 1.0)
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() < 2.0 {
            return z;
        }
    }
}

/// Intercept column followed by i.i.d. standard normals truncated to `(-2, 2)`.
pub fn gen_covariates<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        row[0] = 1.0;
        for v in row.iter_mut().skip(1) {
            *v = truncated_normal(rng);
        }
    }
    x
}

/// `(v_1, ..., v_s) = 1_s * c` padded with zeros to length `d` after `head`.
fn block(d: usize, head: &[f64], s: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[..head.len()].copy_from_slice(head);
    for x in v.iter_mut().skip(head.len()).take(s) {
        *x = c;
    }
    v
}

fn geometric(d: usize, first: f64, scale: f64, rate: f64) -> Vec<f64> {
    (0..d)
        .map(|k| if k == 0 { first } else { scale * rate.powi(k as i32) })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameter vectors of a design, before the intercepts are calibrated.
#[derive(Debug, Clone)]
struct Params {
    alpha: [Vec<f64>; 2],
    eta: Option<[Vec<f64>; 2]>,
    /// Slopes of the logistic labeling (a, c) or labeling (b) models, intercept slot zero.
    beta_slope: [Vec<f64>; 2],
    omega: Vec<f64>,
    /// Treatment index of the fully labeled designs.
    beta_t: Vec<f64>,
}

fn params(spec: &DgpSpec) -> Params {
    let d = spec.d;
    match spec.dgp {
        DgpKind::A | DgpKind::B | DgpKind::C => {
            let sa = spec.s_alpha;
            let sb = spec.s_beta;
            let ra = 1.0 / ((sa - 1) as f64).sqrt();
            let rb = 1.0 / (sb - 1) as f64;
            let a1 = block(d, &[3.0, 3.0], sa - 1, 3.0 * ra);
            let a0: Vec<f64> = a1.iter().map(|v| -v).collect();
            let b1 = block(d, &[0.0, 1.0], sb - 1, rb);
            let b0: Vec<f64> = b1.iter().map(|v| -v).collect();
            let eta = (spec.dgp == DgpKind::C).then(|| {
                let e1 = block(d, &[0.0, 1.0], sa - 1, ra);
                let e0: Vec<f64> = e1.iter().map(|v| -v).collect();
                [e0, e1]
            });
            Params {
                alpha: [a0, a1],
                eta,
                omega: b1.clone(),
                beta_slope: [b0, b1],
                beta_t: Vec::new(),
            }
        }
        DgpKind::D | DgpKind::E => {
            let a1 = geometric(d, 3.0, 3.0, 0.9);
            let a0: Vec<f64> = a1.iter().map(|v| -v).collect();
            let eta = (spec.dgp == DgpKind::E).then(|| {
                let e1 = geometric(d, 0.0, 1.0, 0.9);
                let e0: Vec<f64> = e1.iter().map(|v| -v).collect();
                [e0, e1]
            });
            let beta_t = if spec.dgp == DgpKind::D {
                geometric(d, 0.99, 0.5, 0.7)
            } else {
                geometric(d, 0.2247, 1.0, 0.7)
            };
            Params {
                alpha: [a0, a1],
                eta,
                beta_slope: [vec![0.0; d], vec![0.0; d]],
                omega: vec![0.0; d],
                beta_t,
            }
        }
    }
}

/// Analytic nuisances and the true ATE of a calibrated design.
#[derive(Debug, Clone)]
pub struct TruthOracle {
    pub dgp: DgpKind,
    pub d: usize,
    /// Calibrated intercepts `beta_N(j)`, indexed by arm (zero for the fully labeled designs).
    pub offsets: [f64; 2],
    pub mu0: f64,
    alpha: [Vec<f64>; 2],
    eta: Option<[Vec<f64>; 2]>,
    beta: [Vec<f64>; 2],
    omega: Vec<f64>,
    beta_t: Vec<f64>,
}

impl TruthOracle {
    /// Treatment probability `pi(x)`.
    pub fn treatment_probability(&self, x: &[f64]) -> f64 {
        match self.dgp {
            DgpKind::A | DgpKind::C => {
                0.5 * (self.product_propensity(Arm::Treated, x) + 1.0 - self.product_propensity(Arm::Control, x))
            }
            DgpKind::B => 0.3 * dot(x, &self.omega).sin() + 0.5,
            DgpKind::D => {
                let u = dot(x, &self.beta_t);
                logistic(u) * (0.3 * u.sin() + 0.7)
            }
            DgpKind::E => logistic(dot(x, &self.beta_t)),
        }
    }

    /// Labeling probability `p_N(j, x) = P(R = 1 | T = j, X = x)`.
    pub fn label_probability(&self, arm: Arm, x: &[f64]) -> f64 {
        match self.dgp {
            DgpKind::A | DgpKind::C => {
                let pi = self.treatment_probability(x);
                let g = self.product_propensity(arm, x);
                let denom = match arm {
                    Arm::Treated => pi,
                    Arm::Control => 1.0 - pi,
                };
                (g / denom).clamp(0.0, 1.0)
            }
            DgpKind::B => logistic(dot(x, &self.beta[arm.index()])),
            DgpKind::D | DgpKind::E => 1.0,
        }
    }

    pub fn alpha(&self, arm: Arm) -> &[f64] {
        &self.alpha[arm.index()]
    }

    /// Quadratic outcome coefficients of designs (c) and (e).
    pub fn eta(&self, arm: Arm) -> Option<&[f64]> {
        self.eta.as_ref().map(|e| e[arm.index()].as_slice())
    }

    /// Full labeling coefficient vector `beta(j)` including the calibrated intercept.
    pub fn beta(&self, arm: Arm) -> &[f64] {
        &self.beta[arm.index()]
    }
}

impl NuisanceOracle for TruthOracle {
    fn outcome_regression(&self, arm: Arm, x: &[f64]) -> f64 {
        let j = arm.index();
        let mut m = dot(x, &self.alpha[j]);
        if let Some(eta) = &self.eta {
            m += x.iter().zip(&eta[j]).map(|(v, e)| v * v * e).sum::<f64>();
        }
        m
    }

    fn product_propensity(&self, arm: Arm, x: &[f64]) -> f64 {
        let j = arm.index();
        match self.dgp {
            DgpKind::A | DgpKind::C => logistic(dot(x, &self.beta[j])),
            DgpKind::B => {
                let pi = self.treatment_probability(x);
                let t = if arm == Arm::Treated { pi } else { 1.0 - pi };
                t * logistic(dot(x, &self.beta[j]))
            }
            DgpKind::D | DgpKind::E => {
                let pi = self.treatment_probability(x);
                if arm == Arm::Treated {
                    pi
                } else {
                    1.0 - pi
                }
            }
        }
    }

    fn counterfactual_mean(&self, arm: Arm) -> f64 {
        let j = arm.index();
        let v = truncated_normal_variance();
        let mut theta = self.alpha[j][0];
        if let Some(eta) = &self.eta {
            theta += eta[j][0] + v * eta[j][1..].iter().sum::<f64>();
        }
        theta
    }
}

/// Index of the last column any parameter vector touches, plus one.
fn support_len(vs: &[&[f64]]) -> usize {
    vs.iter()
        .map(|v| v.iter().rposition(|&x| x != 0.0).map_or(1, |p| p + 1))
        .max()
        .unwrap_or(1)
}

/// Bisection for the intercept `b` with `mean_i w_i g(b + s_i) = target`, the
/// sample `(s_i, w_i)` fixed across steps.
fn bisect_offset(slopes: &[f64], weights: &[f64], target: f64, tol: f64) -> Result<f64> {
    let mean_at = |b: f64| -> f64 {
        slopes
            .iter()
            .zip(weights)
            .map(|(s, w)| w * logistic(b + s))
            .sum::<f64>()
            / slopes.len() as f64
    };
    let (mut lo, mut hi) = (CALIBRATION_LO, CALIBRATION_HI);
    if !(mean_at(lo) < target && mean_at(hi) > target) {
        return Err(Error::Numerical(format!(
            "calibration bracket [{lo}, {hi}] does not contain the target {target}"
        )));
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let err = (mean_at(b) - target).abs();
    if err > tol {
        return Err(Error::Numerical(format!(
            "calibrated mean misses the target {target} by {err}"
        )));
    }
    Ok(b)
}

/// Intercept `beta_N(j)` such that the Monte Carlo mean of `Gamma^{(j)}`'s
/// propensity equals `gamma_target`, using `mc_draws` common random covariates.
pub fn calibrate_offset(
    spec: &DgpSpec,
    arm: Arm,
    gamma_target: f64,
    mc_draws: usize,
    tol: f64,
    seed: u64,
) -> Result<f64> {
    validate_gamma(gamma_target)?;
    if spec.dgp.fully_labeled() {
        return Err(Error::invalid(format!("DGP {} has no labeling intercept", spec.dgp)));
    }
    if mc_draws == 0 {
        return Err(Error::invalid("calibration needs at least one draw"));
    }
    let p = params(spec);
    let j = arm.index();
    let cols = support_len(&[&p.beta_slope[j], &p.omega]);
    let mut rng = stream_rng(seed, 0xCA1 + j as u64);
    let x = gen_covariates(mc_draws, cols, &mut rng);
    let mut slopes = Vec::with_capacity(mc_draws);
    let mut weights = Vec::with_capacity(mc_draws);
    for row in x.rows() {
        let r = row.as_slice().expect("rows are contiguous");
        slopes.push(dot(r, &p.beta_slope[j][..cols]));
        let w = match spec.dgp {
            DgpKind::B => {
                let pi = 0.3 * dot(r, &p.omega[..cols]).sin() + 0.5;
                if arm == Arm::Treated {
                    pi
                } else {
                    1.0 - pi
                }
            }
            _ => 1.0,
        };
        weights.push(w);
    }
    bisect_offset(&slopes, &weights, gamma_target, tol)
}

/// Calibration sample size used by [`build_oracle`].
pub const CALIBRATION_DRAWS: usize = 1_000_000;
/// Calibration tolerance used by [`build_oracle`].
pub const CALIBRATION_TOL: f64 = 2e-3;

/// Calibrates the intercepts (for the partially labeled designs) and returns
/// the design's truth.
pub fn build_oracle(spec: &DgpSpec) -> Result<TruthOracle> {
    build_oracle_with(spec, CALIBRATION_DRAWS, CALIBRATION_TOL)
}

pub fn build_oracle_with(spec: &DgpSpec, mc_draws: usize, tol: f64) -> Result<TruthOracle> {
    spec.validate()?;
    let p = params(spec);
    let mut offsets = [0.0; 2];
    let mut beta = p.beta_slope.clone();
    if !spec.dgp.fully_labeled() {
        for arm in Arm::BOTH {
            let j = arm.index();
            let b = calibrate_offset(spec, arm, spec.gamma_target[j], mc_draws, tol, derive_seed(spec.seed, j as u64))?;
            offsets[j] = b;
            beta[j][0] = b;
        }
    }
    let mut oracle = TruthOracle {
        dgp: spec.dgp,
        d: spec.d,
        offsets,
        mu0: 0.0,
        alpha: p.alpha,
        eta: p.eta,
        beta,
        omega: p.omega,
        beta_t: p.beta_t,
    };
    oracle.mu0 = true_ate(&oracle);
    Ok(oracle)
}

/// `E[Y(1)] - E[Y(0)]` in closed form: the non-intercept covariates have mean
/// zero and the truncated-normal variance as second moment.
pub fn true_ate(oracle: &TruthOracle) -> f64 {
    oracle.counterfactual_mean(Arm::Treated) - oracle.counterfactual_mean(Arm::Control)
}

/// Monte Carlo estimate of the ATE over `draws` covariate vectors, with its
/// standard error. Only columns the outcome models touch are simulated.
pub fn true_ate_mc(oracle: &TruthOracle, draws: usize, seed: u64) -> (f64, f64) {
    let mut cols = support_len(&[&oracle.alpha[0], &oracle.alpha[1]]);
    if let Some(eta) = &oracle.eta {
        cols = cols.max(support_len(&[&eta[0], &eta[1]]));
    }
    let mut rng = stream_rng(seed, 0xA7E);
    let mut x = vec![0.0; oracle.d];
    x[0] = 1.0;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        for v in x.iter_mut().take(cols).skip(1) {
            *v = truncated_normal(&mut rng);
        }
        let diff = oracle.outcome_regression(Arm::Treated, &x) - oracle.outcome_regression(Arm::Control, &x);
        sum += diff;
        sq += diff * diff;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Realized means of `Gamma^{(0)}` and `Gamma^{(1)}` over `draws` fresh
/// samples, streamed row by row.
pub fn realized_gamma_means(oracle: &TruthOracle, draws: usize, seed: u64) -> [f64; 2] {
    let mut rng = stream_rng(seed, 0x6A3);
    let mut x = vec![0.0; oracle.d];
    x[0] = 1.0;
    let mut counts = [0usize; 2];
    for _ in 0..draws {
        for v in x.iter_mut().skip(1) {
            *v = truncated_normal(&mut rng);
        }
        let u_t: f64 = rng.random();
        let u_r: f64 = rng.random();
        let arm = if u_t < oracle.treatment_probability(&x) {
            Arm::Treated
        } else {
            Arm::Control
        };
        if u_r < oracle.label_probability(arm, &x) {
            counts[arm.index()] += 1;
        }
    }
    counts.map(|c| c as f64 / draws.max(1) as f64)
}

/// A simulated dataset together with both potential outcomes.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub dataset: Dataset,
    /// `Y_i(0)` and `Y_i(1)`, indexed by arm.
    pub potential: [Vec<f64>; 2],
}

/// Draws `n` samples: covariates, then per row the treatment, the label and
/// the shared outcome noise.
pub fn gen_draw<R: Rng + ?Sized>(spec: &DgpSpec, oracle: &TruthOracle, rng: &mut R) -> Result<SimDraw> {
    spec.validate()?;
    if oracle.dgp != spec.dgp || oracle.d != spec.d {
        return Err(Error::invalid("oracle does not match the design"));
    }
    let n = spec.n;
    let x = gen_covariates(n, spec.d, rng);
    let mut t = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for row in x.rows() {
        let xi = row.as_slice().expect("rows are contiguous");
        let u_t: f64 = rng.random();
        let u_r: f64 = rng.random();
        let delta: f64 = rng.sample(StandardNormal);
        let ti = u8::from(u_t < oracle.treatment_probability(xi));
        let arm = if ti == 1 { Arm::Treated } else { Arm::Control };
        let ri = u8::from(u_r < oracle.label_probability(arm, xi));
        let p0 = oracle.outcome_regression(Arm::Control, xi) + delta;
        let p1 = oracle.outcome_regression(Arm::Treated, xi) + delta;
        t.push(ti);
        r.push(ri);
        y.push((ri == 1).then_some(if ti == 1 { p1 } else { p0 }));
        y0.push(p0);
        y1.push(p1);
    }
    let dataset = Dataset::new(x, t, r, None, y)?;
    Ok(SimDraw {
        dataset,
        potential: [y0, y1],
    })
}

pub fn gen_dataset<R: Rng + ?Sized>(spec: &DgpSpec, oracle: &TruthOracle, rng: &mut R) -> Result<Dataset> {
    Ok(gen_draw(spec, oracle, rng)?.dataset)
}
