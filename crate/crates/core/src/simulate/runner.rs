use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use super::dgp::{build_oracle, gen_dataset, DgpSpec, TruthOracle};
use super::metrics::{MetricsRow, MetricsTable, RepEstimate};
use crate::error::{Error, Result};
use crate::estimators::{brss_ate, dr_dmar_ate, BrssSettings, DrSettings};
use crate::model::{AteReport, Dataset, NuisanceOracle};
use crate::nuisance::{LambdaPolicy, LearnerSpec};
use crate::rng::{derive_seed, stream_rng};
use crate::solvers::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Doubly robust estimator with the true nuisances plugged in.
    Oracle,
    /// Labeling treated as completely at random.
    Mcar,
    /// Lasso outcome model with the offset-logistic product propensity.
    SsLasso,
    /// Lasso outcome model with the two-model product propensity.
    SsProduct,
    /// Bias-reduced estimator with targeted nuisances.
    Brss,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Mcar => "mcar",
            EstimatorKind::SsLasso => "ss-lasso",
            EstimatorKind::SsProduct => "ss-product",
            EstimatorKind::Brss => "brss",
        }
    }

    /// Parses a comma-separated list such as `oracle,mcar,ss-lasso,brss`.
    pub fn parse_list(s: &str) -> Result<Vec<EstimatorKind>> {
        let list: Vec<EstimatorKind> = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if list.is_empty() {
            return Err(Error::invalid("no estimators given"));
        }
        Ok(list)
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" => Ok(EstimatorKind::Oracle),
            "mcar" => Ok(EstimatorKind::Mcar),
            "ss-lasso" => Ok(EstimatorKind::SsLasso),
            "ss-product" => Ok(EstimatorKind::SsProduct),
            "brss" => Ok(EstimatorKind::Brss),
            other => Err(Error::invalid(format!(
                "unknown estimator '{other}' (expected oracle, mcar, ss-lasso, ss-product or brss)"
            ))),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub k_folds: usize,
    pub n_repeats: usize,
    pub level: f64,
    pub lambda_policy: LambdaPolicy,
    pub solver: SolverConfig,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            k_folds: 2,
            n_repeats: 1,
            level: 0.95,
            lambda_policy: LambdaPolicy::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Per-estimator results of one replication, in the order requested.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub rep: usize,
    pub results: Vec<std::result::Result<RepEstimate, String>>,
}

fn rep_seed(base_seed: u64, r: usize) -> u64 {
    base_seed.wrapping_add(r as u64)
}

/// The dataset of replication `r`, drawn from its own seed `base_seed + r`.
pub fn replication_dataset(spec: &DgpSpec, oracle: &TruthOracle, base_seed: u64, r: usize) -> Result<Dataset> {
    let mut rng = stream_rng(rep_seed(base_seed, r), 0);
    gen_dataset(spec, oracle, &mut rng)
}

pub fn run_estimator(
    kind: EstimatorKind,
    dataset: &Dataset,
    oracle: &Arc<TruthOracle>,
    settings: &SimSettings,
    seed: u64,
) -> Result<AteReport> {
    let dr = DrSettings {
        k_folds: settings.k_folds,
        n_repeats: settings.n_repeats,
        level: settings.level,
    };
    let learner = |spec: LearnerSpec| LearnerSpec {
        lambda_policy: settings.lambda_policy.clone(),
        solver: settings.solver.clone(),
        ..spec
    };
    match kind {
        EstimatorKind::Oracle => {
            let o: Arc<dyn NuisanceOracle> = oracle.clone();
            dr_dmar_ate(dataset, &LearnerSpec::oracle(o), &dr, seed)
        }
        EstimatorKind::Mcar => dr_dmar_ate(dataset, &learner(LearnerSpec::mcar()), &dr, seed),
        EstimatorKind::SsLasso => dr_dmar_ate(dataset, &learner(LearnerSpec::ss_lasso()), &dr, seed),
        EstimatorKind::SsProduct => dr_dmar_ate(dataset, &learner(LearnerSpec::ss_product()), &dr, seed),
        EstimatorKind::Brss => {
            let bs = BrssSettings {
                lambda_policy: settings.lambda_policy.clone(),
                solver: settings.solver.clone(),
                level: settings.level,
            };
            brss_ate(dataset, &bs, seed)
        }
    }
}

/// Runs every estimator on `n_reps` independent datasets using `workers`
/// threads. Results do not depend on `workers`.
pub fn run_replications_raw(
    spec: &DgpSpec,
    oracle: &Arc<TruthOracle>,
    estimators: &[EstimatorKind],
    n_reps: usize,
    base_seed: u64,
    workers: usize,
    settings: &SimSettings,
) -> Result<Vec<RepOutcome>> {
    if n_reps == 0 {
        return Err(Error::invalid("at least one replication is required"));
    }
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators given"));
    }
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let one = |r: usize| -> RepOutcome {
        let results = match replication_dataset(spec, oracle, base_seed, r) {
            Err(e) => estimators.iter().map(|_| Err(e.to_string())).collect(),
            Ok(ds) => {
                let seed = derive_seed(rep_seed(base_seed, r), 0xE57);
                estimators
                    .iter()
                    .map(|&k| {
                        run_estimator(k, &ds, oracle, settings, seed)
                            .map(|rep| RepEstimate {
                                mu_hat: rep.mu_hat,
                                sigma_hat: rep.sigma_hat,
                                n: rep.n,
                                ci: rep.ci,
                            })
                            .map_err(|e| e.to_string())
                    })
                    .collect()
            }
        };
        RepOutcome { rep: r, results }
    };
    Ok(pool.install(|| (0..n_reps).into_par_iter().map(one).collect()))
}

/// Reduces replication outcomes to one metrics row per estimator.
pub fn summarize(estimators: &[EstimatorKind], mu0: f64, outcomes: &[RepOutcome]) -> MetricsTable {
    let rows = estimators
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let ok: Vec<RepEstimate> = outcomes.iter().filter_map(|o| o.results[k].as_ref().ok().copied()).collect();
            let fail = outcomes.len() - ok.len();
            MetricsRow::from_estimates(kind.name(), mu0, &ok, fail)
        })
        .collect();
    MetricsTable {
        rows,
        n_reps: outcomes.len(),
        mu0,
    }
}

/// Calibrates the design, runs the replications and summarizes them.
pub fn run_replications(
    spec: &DgpSpec,
    estimators: &[EstimatorKind],
    n_reps: usize,
    base_seed: u64,
    workers: usize,
    settings: &SimSettings,
) -> Result<MetricsTable> {
    let oracle = Arc::new(build_oracle(spec)?);
    let outcomes = run_replications_raw(spec, &oracle, estimators, n_reps, base_seed, workers, settings)?;
    Ok(summarize(estimators, oracle.mu0, &outcomes))
}
