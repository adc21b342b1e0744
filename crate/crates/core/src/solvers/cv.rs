//! K-fold cross-validation of the penalty level along a warm-started path.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::lasso::{lasso_cd, Gram};
use super::loss::{offset_logistic_loss, tbr_beta_loss, Glm, RowTerm, SmoothLoss};
use super::{proximal_gradient, SolverConfig};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Data for one of the penalized problems, over the rows of a training slice.
#[derive(Debug, Clone, Copy)]
pub enum CvProblem<'a> {
    /// Weighted least squares; rows with zero weight do not enter the fit.
    /// Stratified by positive weight.
    LeastSquares {
        x: ArrayView2<'a, f64>,
        y: &'a [f64],
        weights: &'a [f64],
    },
    /// Offset logistic regression, stratified by label.
    OffsetLogistic {
        x: ArrayView2<'a, f64>,
        labels: &'a [u8],
        offset: &'a [f64],
    },
    /// Exponential-tilting loss with a fixed `gamma_hat`, stratified by `gamma`.
    TbrBeta {
        x: ArrayView2<'a, f64>,
        gamma: &'a [u8],
        gamma_hat: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda: f64,
    /// Grid in the order supplied.
    pub grid: Vec<f64>,
    /// Mean held-out loss for each grid value.
    pub cv_loss: Vec<f64>,
}

impl CvProblem<'_> {
    fn n(&self) -> usize {
        match self {
            CvProblem::LeastSquares { y, .. } => y.len(),
            CvProblem::OffsetLogistic { labels, .. } => labels.len(),
            CvProblem::TbrBeta { gamma, .. } => gamma.len(),
        }
    }

    fn strata(&self) -> Vec<bool> {
        match self {
            CvProblem::LeastSquares { weights, .. } => weights.iter().map(|&w| w > 0.0).collect(),
            CvProblem::OffsetLogistic { labels, .. } => labels.iter().map(|&l| l == 1).collect(),
            CvProblem::TbrBeta { gamma, .. } => gamma.iter().map(|&g| g == 1).collect(),
        }
    }

    /// Smallest penalty at which every penalized coefficient is zero: the
    /// largest penalized gradient entry at the zero vector, or at the
    /// intercept-only fit when the intercept is free.
    pub fn lambda_max(&self, config: &SolverConfig) -> Result<f64> {
        let all: Vec<usize> = (0..self.n()).collect();
        let free = !config.penalize_intercept;
        // Any finite penalty this large zeroes every penalized coordinate.
        let wall = f64::MAX;
        let cfg = SolverConfig {
            init: None,
            record_trace: false,
            ..config.clone()
        };
        let g = match self {
            CvProblem::LeastSquares { x, y, weights } => {
                let gram = Gram::new(*x, y, weights)?;
                if free {
                    lasso_cd(&gram, wall, &cfg)?.gradient
                } else {
                    gram.gradient(&vec![0.0; x.ncols()])
                }
            }
            _ => match self.glm(&all)? {
                AnyGlm::Logistic(l) if free => proximal_gradient(&l, wall, &cfg)?.gradient,
                AnyGlm::Tbr(l) if free => proximal_gradient(&l, wall, &cfg)?.gradient,
                AnyGlm::Logistic(l) => l.gradient(&vec![0.0; l.dim()]),
                AnyGlm::Tbr(l) => l.gradient(&vec![0.0; l.dim()]),
            },
        };
        let skip = usize::from(free);
        Ok(g.iter().skip(skip).fold(0.0f64, |m, v| m.max(v.abs())))
    }

    fn glm(&self, rows: &[usize]) -> Result<AnyGlm> {
        match self {
            CvProblem::OffsetLogistic { x, labels, offset } => {
                let xs = x.select(Axis(0), rows);
                let l: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
                let o: Vec<f64> = rows.iter().map(|&i| offset[i]).collect();
                Ok(AnyGlm::Logistic(offset_logistic_loss(xs.view(), &l, &o)?))
            }
            CvProblem::TbrBeta { x, gamma, gamma_hat } => {
                let xs = x.select(Axis(0), rows);
                let g: Vec<u8> = rows.iter().map(|&i| gamma[i]).collect();
                Ok(AnyGlm::Tbr(tbr_beta_loss(xs.view(), &g, *gamma_hat)?))
            }
            CvProblem::LeastSquares { .. } => unreachable!("least squares uses the Gram path"),
        }
    }
}

enum AnyGlm {
    Logistic(Glm<super::loss::LogisticTerm>),
    Tbr(Glm<super::loss::ExpTerm>),
}

/// Geometric grid of `n` values from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(f64::MIN_POSITIVE)];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

/// Fold labels in `0..k`, dealing each stratum's shuffled members round-robin
/// so both strata spread evenly across folds.
pub fn stratified_folds(strata: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if strata.len() < k {
        return Err(Error::degenerate(format!(
            "{} rows cannot fill {k} cross-validation folds",
            strata.len()
        )));
    }
    let mut rng = stream_rng(seed, 0xC5);
    let mut pos: Vec<usize> = (0..strata.len()).filter(|&i| strata[i]).collect();
    let mut neg: Vec<usize> = (0..strata.len()).filter(|&i| !strata[i]).collect();
    if pos.len() < k {
        return Err(Error::degenerate(format!(
            "a cross-validation fold has no labeled sample ({} labeled rows for {k} folds)",
            pos.len()
        )));
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out = vec![0; strata.len()];
    for (c, &i) in pos.iter().chain(neg.iter()).enumerate() {
        out[i] = c % k;
    }
    Ok(out)
}

/// Iteration cap for a single fit along a cross-validation path.
pub const PATH_MAX_ITER: usize = 2000;

/// Chooses the grid value with the smallest mean held-out unpenalized loss;
/// ties go to the larger penalty. Along each fold's path, the first fit that
/// fails to converge or hits the exponent clamp ends the path: it and every
/// smaller penalty get an infinite loss for that fold.
pub fn cross_validate_lambda(
    problem: &CvProblem<'_>,
    grid: &[f64],
    n_folds: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("lambda grid values must be positive and finite"));
    }
    if grid.len() == 1 {
        return Ok(CvResult {
            lambda: grid[0],
            grid: grid.to_vec(),
            cv_loss: vec![f64::NAN],
        });
    }
    let folds = stratified_folds(&problem.strata(), n_folds, seed)?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));

    let mut total = vec![0.0; grid.len()];
    let path_config = SolverConfig {
        init: None,
        record_trace: false,
        max_iter: config.max_iter.min(PATH_MAX_ITER),
        ..config.clone()
    };
    let full_gram = match problem {
        CvProblem::LeastSquares { x, y, weights } => Some(Gram::new(*x, y, weights)?),
        _ => None,
    };
    let n = problem.n();
    for f in 0..n_folds {
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let losses = match problem {
            CvProblem::LeastSquares { x, y, weights } => {
                let test_gram = Gram::accumulate(*x, y, weights, &test, test.len() as f64);
                let train_gram = full_gram.as_ref().expect("gram built above").sub(
                    &test_gram,
                    n as f64,
                    test.len() as f64,
                    train.len() as f64,
                );
                let mut warm = vec![0.0; x.ncols()];
                let mut out = vec![0.0; grid.len()];
                for &g in &order {
                    let res = lasso_cd(&train_gram, grid[g], &path_config.with_init(warm))?;
                    out[g] = test_gram.loss(&res.coefficients);
                    warm = res.coefficients;
                }
                out
            }
            _ => match (problem.glm(&train)?, problem.glm(&test)?) {
                (AnyGlm::Logistic(tr), AnyGlm::Logistic(te)) => glm_path(&tr, &te, grid, &order, &path_config)?,
                (AnyGlm::Tbr(tr), AnyGlm::Tbr(te)) => glm_path(&tr, &te, grid, &order, &path_config)?,
                _ => unreachable!(),
            },
        };
        for (t, l) in total.iter_mut().zip(&losses) {
            *t += l / n_folds as f64;
        }
    }

    let mut best = order[0];
    for &g in &order[1..] {
        if total[g] < total[best] {
            best = g;
        }
    }
    Ok(CvResult {
        lambda: grid[best],
        grid: grid.to_vec(),
        cv_loss: total,
    })
}

fn glm_path<T: RowTerm>(
    train: &Glm<T>,
    test: &Glm<T>,
    grid: &[f64],
    order: &[usize],
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let mut warm = vec![0.0; train.dim()];
    let mut out = vec![f64::INFINITY; grid.len()];
    for &g in order {
        let res = proximal_gradient(train, grid[g], &config.with_init(warm))?;
        if res.degraded() {
            break;
        }
        out[g] = test.value(&res.coefficients);
        warm = res.coefficients;
    }
    Ok(out)
}
