//! Median-based summaries of replicated estimates.

use std::fmt::Write as _;

/// One replication's output for one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepEstimate {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub n: usize,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub estimator: String,
    /// `median(mu_hat - mu0)`.
    pub bias: f64,
    /// `sqrt(median((mu_hat - mu0)^2))`.
    pub rmse: f64,
    /// Median interval length.
    pub length: f64,
    /// Fraction of intervals containing `mu0`.
    pub coverage: f64,
    /// `1.4826 * MAD(mu_hat)`.
    pub esd: f64,
    /// `median(sqrt(sigma_hat / N))`.
    pub asd: f64,
    pub n_ok: usize,
    pub n_fail: usize,
}

impl MetricsRow {
    /// Summarizes the successful replications; `n_fail` counts the others.
    pub fn from_estimates(estimator: &str, mu0: f64, estimates: &[RepEstimate], n_fail: usize) -> Self {
        let errors: Vec<f64> = estimates.iter().map(|e| e.mu_hat - mu0).collect();
        let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
        let lengths: Vec<f64> = estimates.iter().map(|e| e.ci.1 - e.ci.0).collect();
        let mus: Vec<f64> = estimates.iter().map(|e| e.mu_hat).collect();
        let center = median(&mus);
        let dev: Vec<f64> = mus.iter().map(|m| (m - center).abs()).collect();
        let sds: Vec<f64> = estimates.iter().map(|e| (e.sigma_hat / e.n as f64).sqrt()).collect();
        let covered = estimates.iter().filter(|e| e.ci.0 <= mu0 && mu0 <= e.ci.1).count();
        let coverage = if estimates.is_empty() {
            f64::NAN
        } else {
            covered as f64 / estimates.len() as f64
        };
        MetricsRow {
            estimator: estimator.to_string(),
            bias: median(&errors),
            rmse: median(&sq).sqrt(),
            length: median(&lengths),
            coverage,
            esd: 1.4826 * median(&dev),
            asd: median(&sds),
            n_ok: estimates.len(),
            n_fail,
        }
    }

    /// Failures below 2% of all replications.
    pub fn valid(&self) -> bool {
        let total = self.n_ok + self.n_fail;
        total > 0 && self.n_ok > 0 && (self.n_fail as f64) < 0.02 * total as f64
    }
}

/// Median with the two middle values averaged for even counts; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub n_reps: usize,
    pub mu0: f64,
}

pub const CSV_HEADER: &str = "estimator,bias,rmse,length,coverage,esd,asd,n_fail";

impl MetricsTable {
    pub fn valid(&self) -> bool {
        self.rows.iter().all(MetricsRow::valid)
    }

    pub fn row(&self, estimator: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    /// One line per estimator at full double precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.estimator, r.bias, r.rmse, r.length, r.coverage, r.esd, r.asd, r.n_fail
            );
        }
        out
    }

    /// Aligned table with six significant digits.
    pub fn to_text(&self) -> String {
        let head = ["estimator", "bias", "rmse", "length", "coverage", "esd", "asd", "n_fail"];
        let mut lines: Vec<Vec<String>> = vec![head.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            lines.push(vec![
                r.estimator.clone(),
                sig6(r.bias),
                sig6(r.rmse),
                sig6(r.length),
                sig6(r.coverage),
                sig6(r.esd),
                sig6(r.asd),
                r.n_fail.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..head.len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        let _ = writeln!(out, "mu0 = {}, replications = {}", sig6(self.mu0), self.n_reps);
        out
    }
}

/// Six significant digits, switching to exponent form for very large or
/// small magnitudes.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..=5).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding may add a digit (9.999995 -> 10.00000); one extra decimal is harmless.
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
