//! Simulation designs, true-effect oracles, the replication engine and its
//! median-based summaries.

mod dgp;
mod metrics;
mod runner;

pub use dgp::{
    build_oracle, build_oracle_with, calibrate_offset, realized_gamma_means, gen_covariates, gen_dataset, gen_draw, true_ate, true_ate_mc,
    truncated_normal_variance, DgpKind, DgpSpec, SimDraw, TruthOracle, CALIBRATION_DRAWS, CALIBRATION_HI,
    CALIBRATION_LO, CALIBRATION_TOL,
};
pub use metrics::{median, sig6, MetricsRow, MetricsTable, RepEstimate, CSV_HEADER};
pub use runner::{
    replication_dataset, run_estimator, run_replications, run_replications_raw, summarize, EstimatorKind, RepOutcome,
    SimSettings,
};
