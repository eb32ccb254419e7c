//! Machine-readable run reports and the human tables printed next to them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{AsymptoticConstants, QuadratureReport};
use crate::error::Result;
use crate::estimators::{EstimatorTag, ThetaEstimate, VcovSource};
use crate::inference::{BootstrapResult, TestResult};
use crate::simulation::McSummary;

/// Bumped whenever a field changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub t_stat: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Textbook OLS standard error and t statistic of the same regression,
    /// kept next to bootstrap ones for comparison.
    pub se_classical: Option<f64>,
    pub t_classical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub b: usize,
    pub failed: usize,
    pub extreme_draws: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorTag,
    pub coefficients: Vec<CoefficientRow>,
    pub se_source: Option<VcovSource>,
    pub bootstrap: Option<BootstrapInfo>,
    pub r_squared: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub sigma_u: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: bool,
}

impl EstimateReport {
    /// `classical_se` is the estimator's own covariance before a bootstrap
    /// replaced it, if any.
    pub fn new(fit: &ThetaEstimate, boot: Option<&BootstrapResult>, classical_se: Option<&[f64]>) -> Self {
        let se = fit.se();
        let t_of = |est: f64, s: Option<f64>| s.filter(|&s| s > 0.0).and_then(|s| finite(est / s));
        let coefficients = fit
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let s = se.as_ref().and_then(|s| finite(s[j]));
                let sc = classical_se.and_then(|c| c.get(j).copied()).and_then(finite);
                CoefficientRow {
                    name: name.clone(),
                    estimate: fit.theta[j],
                    se: s,
                    t_stat: t_of(fit.theta[j], s),
                    ci: boot.map(|b| b.percentile_ci[j]),
                    se_classical: sc,
                    t_classical: t_of(fit.theta[j], sc),
                }
            })
            .collect();
        Self {
            estimator: fit.tag,
            coefficients,
            se_source: fit.vcov_source,
            bootstrap: boot.map(|b| BootstrapInfo { b: b.b, failed: b.failed, extreme_draws: b.extreme_draws, level: b.level }),
            r_squared: fit.r_squared.and_then(finite),
            sigma2_hat: fit.sigma2_hat.and_then(finite),
            sigma_u: fit.sigma_u.and_then(finite),
            loglik: fit.loglik.and_then(finite),
            converged: fit.converged,
        }
    }

    pub fn row(&self, name: &str) -> Option<&CoefficientRow> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    #[serde(flatten)]
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub provenance: String,
    pub n: usize,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub dist: String,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub sigma_e2: f64,
    pub lemma_b_lhs: f64,
    pub lemma_b_rhs: f64,
    pub lemma_b_residual: f64,
    /// Smallest eigenvalue of the (z, η) block of M; zero for a Gaussian error.
    pub singularity_margin: f64,
    pub quadrature: QuadratureReport,
}

impl ConstantsReport {
    pub fn new(dist: String, c: &AsymptoticConstants, lemma_b: (f64, f64), margin: f64) -> Self {
        Self {
            dist,
            c1: c.c1,
            c2: c.c2,
            c3: c.c3,
            sigma_e2: c.sigma_e2,
            lemma_b_lhs: lemma_b.0,
            lemma_b_rhs: lemma_b.1,
            lemma_b_residual: (lemma_b.0 - lemma_b.1).abs(),
            singularity_margin: margin,
            quadrature: c.quadrature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub software_version: String,
    pub command: String,
    /// The command's arguments as given.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub elapsed_seconds: f64,
    pub threads: usize,
    pub dataset: Option<DatasetInfo>,
    pub estimates: Vec<EstimateReport>,
    pub tests: Vec<NamedTest>,
    pub diagnostics: Vec<NamedTest>,
    pub simulation: Option<McSummary>,
    pub constants: Option<ConstantsReport>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            software_version: crate::VERSION.to_string(),
            command: command.to_string(),
            config,
            seed,
            elapsed_seconds: 0.0,
            threads: rayon::current_num_threads(),
            dataset: None,
            estimates: Vec::new(),
            tests: Vec::new(),
            diagnostics: Vec::new(),
            simulation: None,
            constants: None,
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn estimate(&self, tag: EstimatorTag) -> Option<&EstimateReport> {
        self.estimates.iter().find(|e| e.estimator == tag)
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Estimates and t statistics side by side, one column pair per estimator,
/// with standard errors in parentheses below each estimate.
pub fn fit_table(report: &RunReport) -> String {
    let mut names: Vec<&str> = Vec::new();
    for e in &report.estimates {
        for c in &e.coefficients {
            if !names.contains(&c.name.as_str()) {
                names.push(&c.name);
            }
        }
    }
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(12);
    let mut out = String::new();
    let _ = write!(out, "{:width$}", "");
    for e in &report.estimates {
        let _ = write!(out, " {:>22}", e.estimator.label());
    }
    let _ = write!(out, "\n{:width$}", "");
    for _ in &report.estimates {
        let _ = write!(out, " {:>11}{:>11}", "estimate", "t stat");
    }
    out.push('\n');
    for n in &names {
        let _ = write!(out, "{n:width$}");
        for e in &report.estimates {
            match e.row(n) {
                Some(r) => {
                    let _ = write!(out, " {:>11.4}{:>11}", r.estimate, opt(r.t_stat, 2));
                }
                None => {
                    let _ = write!(out, " {:>11}{:>11}", "", "");
                }
            }
        }
        out.push('\n');
        let _ = write!(out, "{:width$}", "");
        for e in &report.estimates {
            let se = e.row(n).and_then(|r| r.se).map(|s| format!("({s:.4})"));
            let _ = write!(out, " {:>11}{:>11}", se.unwrap_or_default(), "");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:width$}", "se");
    for e in &report.estimates {
        let src = match e.se_source {
            Some(VcovSource::Classical) => "classical",
            Some(VcovSource::Hc0) => "HC0",
            Some(VcovSource::Bootstrap) => "bootstrap",
            Some(VcovSource::AsymptoticOracle) => "asymptotic",
            None => "none",
        };
        let _ = write!(out, " {src:>22}");
    }
    out.push('\n');
    for t in report.tests.iter().chain(&report.diagnostics) {
        let _ = writeln!(out, "{}: statistic {:.4}, p-value {:.4} (H0: {})", t.name, t.result.statistic, t.result.p_value, t.result.null_description);
    }
    if let Some(d) = &report.dataset {
        let _ = writeln!(out, "n = {} ({} rows dropped)", d.n, d.dropped_rows);
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Bias, std, rmse and size rows with one column per estimator and coefficient.
type StatGetter = fn(&crate::simulation::CoefStats) -> Option<f64>;

pub fn mc_table(s: &McSummary) -> String {
    let mut cols: Vec<(EstimatorTag, &str)> = Vec::new();
    for c in &s.stats {
        cols.push((c.estimator, c.coefficient.as_str()));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{} | reps = {}, B = {}", s.config.describe(), s.reps, s.b);
    let _ = write!(out, "{:6}", "");
    for (t, c) in &cols {
        let coef = if *c == "z" { "gamma" } else { "beta" };
        let _ = write!(out, " {:>14}", format!("{}:{}", t.label(), coef));
    }
    out.push('\n');
    let rows: [(&str, StatGetter); 4] = [
        ("bias", |c| Some(c.bias)),
        ("std", |c| Some(c.std)),
        ("rmse", |c| Some(c.rmse)),
        ("size", |c| c.size),
    ];
    for (label, get) in rows {
        let _ = write!(out, "{label:6}");
        for c in &s.stats {
            let _ = write!(out, " {:>14}", opt(get(c), 3));
        }
        out.push('\n');
    }
    for (t, f) in s.failures.iter().chain(&s.test_failures) {
        if *f > 0 {
            let _ = writeln!(out, "{}: {} repetitions failed", t.label(), f);
        }
    }
    out
}

pub fn constants_table(c: &ConstantsReport) -> String {
    format!(
        "distribution        {}\nc1                  {:.10}\nc2                  {:.10}\nc3                  {:.10}\nvariance            {:.10}\nbridge identity     lhs {:.10}, rhs {:.10}, residual {:.3e}\nsingularity margin  {:.3e}\n",
        c.dist, c.c1, c.c2, c.c3, c.sigma_e2, c.lemma_b_lhs, c.lemma_b_rhs, c.lemma_b_residual, c.singularity_margin
    )
}
