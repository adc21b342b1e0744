//! Command-line front end: `simulate`, `estimate`, `calibrate` and `generate`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::estimators::{brss_ate, dr_dmar_ate, BrssSettings, DrSettings};
use crate::model::{Arm, AteReport, Dataset};
use crate::nuisance::{CvSettings, LambdaPolicy, LearnerSpec};
use crate::rng::derive_seed;
use crate::simulate::{
    build_oracle, build_oracle_with, realized_gamma_means, replication_dataset, run_replications, sig6, DgpKind,
    DgpSpec, EstimatorKind, SimSettings, CALIBRATION_DRAWS, CALIBRATION_TOL,
};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "DMAR_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "dmar", version, about = "Doubly robust ATE estimation with rare, selectively labeled outcomes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo coverage study and write its metrics table.
    Simulate(SimulateArgs),
    /// Estimate the ATE on a CSV dataset.
    Estimate(EstimateArgs),
    /// Calibrate the labeling intercepts of a design.
    Calibrate(CalibrateArgs),
    /// Write one simulated dataset in the estimate input format.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// Design: a, b, c, d or e.
    #[arg(long)]
    pub dgp: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 51)]
    pub d: usize,
    /// Outcome sparsity. Defaults to 3 for a, d, e; 2 for b; 6 for c.
    #[arg(long = "s-alpha")]
    pub s_alpha: Option<usize>,
    /// Propensity sparsity. Defaults to 3 for a, d, e; 6 for b; 2 for c.
    #[arg(long = "s-beta")]
    pub s_beta: Option<usize>,
    /// Target labeling rate in each arm.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
}

impl DesignArgs {
    fn spec(&self, seed: u64) -> Result<DgpSpec> {
        let dgp: DgpKind = self.dgp.parse()?;
        let (sa, sb) = dgp.table_sparsity();
        let s_alpha = self.s_alpha.unwrap_or(sa);
        let s_beta = self.s_beta.unwrap_or(sb);
        let mut spec = DgpSpec::new(dgp, self.n, self.d, s_alpha, s_beta, self.gamma);
        spec.seed = seed;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PenaltyArgs {
    /// Folds used to cross-validate each penalty.
    #[arg(long = "cv-folds", default_value_t = 5)]
    pub cv_folds: usize,
    /// Fixed outcome-model penalty (skips cross-validation; needs --lambda-ps).
    #[arg(long = "lambda-or", requires = "lambda_ps")]
    pub lambda_or: Option<f64>,
    /// Fixed propensity-model penalty (skips cross-validation; needs --lambda-or).
    #[arg(long = "lambda-ps", requires = "lambda_or")]
    pub lambda_ps: Option<f64>,
}

impl PenaltyArgs {
    fn policy(&self) -> Result<LambdaPolicy> {
        match (self.lambda_or, self.lambda_ps) {
            (Some(or), Some(ps)) => {
                if !(or >= 0.0 && ps >= 0.0) {
                    return Err(Error::invalid("penalties must be nonnegative"));
                }
                Ok(LambdaPolicy::Fixed { or, ps })
            }
            _ => {
                if self.cv_folds < 2 {
                    return Err(Error::invalid("--cv-folds must be at least 2"));
                }
                Ok(LambdaPolicy::Cv(CvSettings {
                    folds: self.cv_folds,
                    ..CvSettings::default()
                }))
            }
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Comma-separated estimators: oracle, mcar, ss-lasso, ss-product, brss.
    #[arg(long, default_value = "oracle,mcar,ss-lasso,brss")]
    pub estimators: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output; a text table is written next to it with extension `.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
    pub workers: usize,
    /// Cross-fitting folds of the general estimator.
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// File of `key = value` lines merged under the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EstimateArgs {
    /// CSV with header `r,t,y,x1,...,xd` and an optional `rt` column.
    #[arg(long)]
    pub input: PathBuf,
    /// ss-lasso, ss-product, mcar or brss.
    #[arg(long, default_value = "ss-lasso")]
    pub method: String,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Report as `key,value` CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo draws for calibration and for the realized means.
    #[arg(long, default_value_t = CALIBRATION_DRAWS)]
    pub draws: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Parses a `key = value` config file into `--key value` arguments. Blank
/// lines and lines starting with `#` are skipped.
pub fn config_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {} is not key = value", no + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(Error::invalid(format!("config line {} has an invalid key", no + 1)));
        }
        out.push(OsString::from(format!("--{key}")));
        out.push(OsString::from(v.trim()));
    }
    Ok(out)
}

/// Splices the contents of any `--config FILE` in front of the command-line
/// flags, so that explicit flags win.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().to_string();
        if s == "--config" {
            path = Some(it.next().ok_or_else(|| Error::invalid("--config needs a file"))?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let extra = config_args(&text)?;
    // Program name and subcommand come first.
    let split = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..split].to_vec();
    out.extend(extra);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}

/// Entry point shared by the binary and the tests: returns the exit code.
pub fn run_from_args(args: Vec<OsString>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Generate(a) => cmd_generate(&a),
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("--level {level} must lie in (0, 1)")));
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = a.design.spec(a.seed)?;
    let estimators = EstimatorKind::parse_list(&a.estimators)?;
    if a.reps == 0 {
        return Err(Error::invalid("--reps must be at least 1"));
    }
    if a.workers == 0 {
        return Err(Error::invalid("--workers must be at least 1"));
    }
    if a.folds < 2 || a.folds > spec.n {
        return Err(Error::invalid("--folds must lie in [2, n]"));
    }
    check_level(a.level)?;
    let settings = SimSettings {
        k_folds: a.folds,
        level: a.level,
        lambda_policy: a.penalty.policy()?,
        ..SimSettings::default()
    };
    let table = run_replications(&spec, &estimators, a.reps, a.seed, a.workers, &settings)?;
    let text = table.to_text();
    print!("{text}");
    if let Some(out) = &a.out {
        fs::write(out, table.to_csv())?;
        fs::write(out.with_extension("txt"), &text)?;
    }
    if !table.valid() {
        return Err(Error::degenerate(
            "replication failures reached 2% for at least one estimator; the table is invalid",
        ));
    }
    Ok(())
}

/// Reads the estimate input format; the constant column is prepended.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let r_col = find("r").ok_or_else(|| Error::Schema("missing column 'r'".into()))?;
    let t_col = find("t").ok_or_else(|| Error::Schema("missing column 't'".into()))?;
    let y_col = find("y").ok_or_else(|| Error::Schema("missing column 'y'".into()))?;
    let rt_col = find("rt");
    let mut x_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()).map(|k| (k, c)))
        .collect();
    x_cols.sort_unstable();
    if x_cols.is_empty() {
        return Err(Error::Schema("no covariate columns x1, x2, ...".into()));
    }
    for (pos, (k, _)) in x_cols.iter().enumerate() {
        if *k != pos + 1 {
            return Err(Error::Schema(format!("covariate columns must be x1..x{}", x_cols.len())));
        }
    }
    let d = x_cols.len() + 1;
    let mut xs = Vec::new();
    let (mut t, mut r, mut rt, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let binary = |s: &str, what: &str, line: usize| -> Result<u8> {
        match s {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(Error::Schema(format!("line {line}: {what} = '{s}' is not 0 or 1"))),
        }
    };
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row_no + 2;
        let ri = binary(&rec[r_col], "r", line)?;
        let rti = match rt_col {
            Some(c) => binary(&rec[c], "rt", line)?,
            None => 1,
        };
        let ti = if rti == 1 {
            binary(&rec[t_col], "t", line)?
        } else {
            0
        };
        let ys = &rec[y_col];
        let yi = if ri == 1 && rti == 1 {
            if ys.is_empty() {
                return Err(Error::Schema(format!("line {line}: y is missing on a labeled row")));
            }
            Some(
                ys.parse::<f64>()
                    .map_err(|_| Error::Schema(format!("line {line}: y = '{ys}' is not a number")))?,
            )
        } else {
            None
        };
        xs.push(1.0);
        for &(_, c) in &x_cols {
            let v = rec[c]
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("line {line}: '{}' is not a number", &rec[c])))?;
            xs.push(v);
        }
        r.push(ri);
        rt.push(rti);
        t.push(ti);
        y.push(yi);
    }
    let n = r.len();
    if n == 0 {
        return Err(Error::Schema("no data rows".into()));
    }
    let x = Array2::from_shape_vec((n, d), xs).map_err(|e| Error::Schema(e.to_string()))?;
    // Outcome label is R_Y times R_T so that a labeled row has both observed.
    let label: Vec<u8> = r.iter().zip(&rt).map(|(a, b)| a * b).collect();
    Dataset::new(x, t, label, rt_col.map(|_| rt), y).map_err(|e| Error::Schema(e.to_string()))
}

/// Writes a dataset in the estimate input format, dropping the constant column.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["r".to_string(), "t".to_string(), "y".to_string()];
    if ds.has_treatment_label() {
        header.push("rt".into());
    }
    header.extend((1..ds.d()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![
            ds.outcome_label(i).to_string(),
            ds.treatment(i).map_or(String::new(), |t| t.to_string()),
            ds.outcome_raw(i).map_or(String::new(), |y| format!("{y}")),
        ];
        if let Some(rt) = ds.treatment_label(i) {
            rec.push(rt.to_string());
        }
        rec.extend(ds.row_slice(i)[1..].iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn estimate_report(ds: &Dataset, a: &EstimateArgs) -> Result<AteReport> {
    check_level(a.level)?;
    let policy = a.penalty.policy()?;
    let method = a.method.trim().to_ascii_lowercase();
    if method == "brss" {
        let settings = BrssSettings {
            lambda_policy: policy,
            level: a.level,
            ..BrssSettings::default()
        };
        return brss_ate(ds, &settings, a.seed);
    }
    let learner = match method.as_str() {
        "ss-lasso" => LearnerSpec::ss_lasso(),
        "ss-product" => LearnerSpec::ss_product(),
        "mcar" => LearnerSpec::mcar(),
        other => {
            return Err(Error::invalid(format!(
                "unknown method '{other}' (expected ss-lasso, ss-product, mcar or brss)"
            )))
        }
    }
    .with_lambda_policy(policy);
    if a.folds < 2 || a.folds > ds.n() {
        return Err(Error::invalid(format!("--folds must lie in [2, {}]", ds.n())));
    }
    let settings = DrSettings {
        k_folds: a.folds,
        n_repeats: a.repeats,
        level: a.level,
    };
    dr_dmar_ate(ds, &learner, &settings, a.seed)
}

/// `(key, value)` pairs of a report at full precision.
pub fn report_pairs(rep: &AteReport, method: &str) -> Vec<(String, String)> {
    let t = rep.arm(Arm::Treated);
    let c = rep.arm(Arm::Control);
    let dg = &rep.diagnostics;
    let f = |v: f64| format!("{v}");
    vec![
        ("method".into(), method.to_string()),
        ("n".into(), rep.n.to_string()),
        ("mu_hat".into(), f(rep.mu_hat)),
        ("se".into(), f(rep.standard_error())),
        ("sigma_hat".into(), f(rep.sigma_hat)),
        ("ci_level".into(), f(rep.ci_level)),
        ("ci_lo".into(), f(rep.ci.0)),
        ("ci_hi".into(), f(rep.ci.1)),
        ("theta_1".into(), f(t.theta_hat)),
        ("theta_0".into(), f(c.theta_hat)),
        ("sigma_1".into(), f(t.sigma_hat)),
        ("sigma_0".into(), f(c.sigma_hat)),
        ("gamma_bar_1".into(), f(dg.gamma_bar[1])),
        ("gamma_bar_0".into(), f(dg.gamma_bar[0])),
        ("a_hat_1".into(), f(dg.a_hat[1])),
        ("a_hat_0".into(), f(dg.a_hat[0])),
        ("effective_sample_size".into(), f(dg.effective_sample_size)),
        ("ps_floor".into(), f(dg.ps_floor)),
        ("clip_count_1".into(), dg.clip_counts[1].to_string()),
        ("clip_count_0".into(), dg.clip_counts[0].to_string()),
        ("degraded_fits".into(), dg.degraded_fits.to_string()),
    ]
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let rep = estimate_report(&ds, a)?;
    let method = a.method.trim().to_ascii_lowercase();
    let pairs = report_pairs(&rep, &method);
    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["key", "value"])?;
        for (k, v) in &pairs {
            w.write_record([k, v])?;
        }
        w.flush()?;
    }
    let dg = &rep.diagnostics;
    let mut s = String::new();
    let _ = writeln!(s, "method: {method}, n = {}", rep.n);
    let _ = writeln!(
        s,
        "ATE = {} (se {}), {}% CI [{}, {}]",
        sig6(rep.mu_hat),
        sig6(rep.standard_error()),
        sig6(100.0 * rep.ci_level),
        sig6(rep.ci.0),
        sig6(rep.ci.1)
    );
    let _ = writeln!(
        s,
        "theta_1 = {}, theta_0 = {}",
        sig6(rep.arm(Arm::Treated).theta_hat),
        sig6(rep.arm(Arm::Control).theta_hat)
    );
    let _ = writeln!(
        s,
        "labeled fractions: arm 1 {}, arm 0 {}; effective overlap: arm 1 {}, arm 0 {}; effective sample size {}",
        sig6(dg.gamma_bar[1]),
        sig6(dg.gamma_bar[0]),
        sig6(dg.a_hat[1]),
        sig6(dg.a_hat[0]),
        sig6(dg.effective_sample_size)
    );
    let _ = writeln!(
        s,
        "propensity floor {} hit {} (arm 1) and {} (arm 0) times; degraded fits {}",
        sig6(dg.ps_floor),
        dg.clip_counts[1],
        dg.clip_counts[0],
        dg.degraded_fits
    );
    print!("{s}");
    Ok(())
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let spec = a.design.spec(a.seed)?;
    if spec.dgp.fully_labeled() {
        return Err(Error::invalid(format!("DGP {} is fully labeled; nothing to calibrate", spec.dgp)));
    }
    if a.draws == 0 {
        return Err(Error::invalid("--draws must be at least 1"));
    }
    let oracle = build_oracle_with(&spec, a.draws, CALIBRATION_TOL)?;
    let offsets = oracle.offsets;
    let realized = realized_gamma_means(&oracle, a.draws, derive_seed(a.seed, 0x5EED));
    println!("beta_N(1) = {}", sig6(offsets[1]));
    println!("beta_N(0) = {}", sig6(offsets[0]));
    println!("realized mean Gamma(1) = {}", sig6(realized[1]));
    println!("realized mean Gamma(0) = {}", sig6(realized[0]));
    Ok(())
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let spec = a.design.spec(a.seed)?;
    let oracle = Arc::new(build_oracle(&spec)?);
    let ds = replication_dataset(&spec, &oracle, a.seed, 0)?;
    write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} rows to {} (true ATE {})",
        ds.n(),
        a.out.display(),
        sig6(oracle.mu0)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let args = config_args("# comment\nn = 500\ns_alpha=4\n\n").unwrap();
        assert_eq!(args, vec!["--n", "500", "--s-alpha", "4"]);
        assert!(config_args("oops").is_err());
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.cfg");
        fs::write(&cfg, "n = 500\nd = 7\n").unwrap();
        let argv: Vec<OsString> = ["dmar", "calibrate", "--dgp", "a", "--config", cfg.to_str().unwrap(), "--n", "900"]
            .iter()
            .map(OsString::from)
            .collect();
        let cli = Cli::try_parse_from(expand_config(argv).unwrap()).unwrap();
        let Command::Calibrate(c) = cli.command else { panic!() };
        assert_eq!(c.design.n, 900);
        assert_eq!(c.design.d, 7);
    }
}
