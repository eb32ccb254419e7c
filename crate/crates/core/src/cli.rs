//! Command-line front end: `fit`, `simulate`, `constants` and `generate`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::asymptotics::{constants_c, lemma_b_sides, schur_margin};
use crate::data::{ingest_csv, ModelSpec};
use crate::error::{Error, Result};
use crate::estimators::{fit_bound, EstimatorTag};
use crate::inference::{exogeneity_from_fit, identification_diagnostic, pairs_bootstrap_bound, DEFAULT_BOOTSTRAP, DEFAULT_LEVEL};
use crate::numerics::{DistSpec, QuadratureSpec, RngStream};
use crate::report::{constants_table, fit_table, mc_table, ConstantsReport, DatasetInfo, EstimateReport, NamedTest, RunReport};
use crate::simulation::{generate, mc_draws, mc_run, DgpConfig, EDist, DEFAULT_B, DEFAULT_N, DEFAULT_REPS};
use crate::transform::first_stage;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "ENDOFIX_THREADS";

#[derive(Debug, Parser)]
#[command(name = "endofix", version, about = "Instrument-free endogeneity correction with rank-based control functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a model from a CSV file and report OLS next to the chosen estimator.
    Fit(FitArgs),
    /// Run a Monte Carlo study on one of the simulation designs.
    Simulate(SimulateArgs),
    /// Evaluate the constants of the asymptotic covariance for an error distribution.
    Constants(ConstantsArgs),
    /// Write one simulated dataset to CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    Ols,
    Npcf,
    Iv,
    #[value(name = "2scope")]
    #[serde(rename = "2scope")]
    TwoScope,
    Gp,
}

impl From<EstimatorArg> for EstimatorTag {
    fn from(a: EstimatorArg) -> Self {
        match a {
            EstimatorArg::Ols => EstimatorTag::Ols,
            EstimatorArg::Npcf => EstimatorTag::Npcf,
            EstimatorArg::Iv => EstimatorTag::IvInternal,
            EstimatorArg::TwoScope => EstimatorTag::TwoScope,
            EstimatorArg::Gp => EstimatorTag::GpCopula,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EDistArg {
    G11,
    G32,
}

impl From<EDistArg> for EDist {
    fn from(a: EDistArg) -> Self {
        match a {
            EDistArg::G11 => EDist::G11,
            EDistArg::G32 => EDist::G32,
        }
    }
}

#[derive(Debug, clap::Args, Serialize)]
pub struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    /// Exogenous regressors, comma separated; `square:col` adds col².
    #[arg(long, value_delimiter = ',')]
    pub exog: Vec<String>,
    /// Endogenous regressors, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub endog: Vec<String>,
    /// One or more estimators, comma separated; OLS is always reported.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "npcf")]
    pub estimator: Vec<EstimatorArg>,
    /// Pairs-bootstrap resamples; 0 keeps the classical standard errors.
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Coverage of the percentile intervals.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    /// Write the JSON report here ("-" for standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub dgp: u8,
    #[arg(long, default_value_t = DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub rho: f64,
    /// Slope of z on x (design 1).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta: f64,
    /// Copula correlation of x and e (design 2).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "g11")]
    pub edist: EDistArg,
    /// Bootstrap resamples per repetition; 0 skips the bootstrap t-tests.
    #[arg(long = "B", default_value_t = DEFAULT_B)]
    pub b: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ols,npcf,2scope")]
    pub estimators: Vec<EstimatorArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every repetition's coefficient estimates to this CSV.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct ConstantsArgs {
    /// `normal` or `gamma:shape,rate` (the gamma is centred to mean zero).
    #[arg(long, default_value = "normal")]
    pub dist: String,
    /// Absolute quadrature tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub dgp: u8,
    #[arg(long, default_value_t = DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "g11")]
    pub edist: EDistArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `normal`, `normal:mean,sd` or `gamma:shape,rate`.
pub fn parse_dist(text: &str) -> Result<DistSpec> {
    let bad = || Error::InvalidArgument(format!("cannot parse distribution `{text}` (expected normal or gamma:shape,rate)"));
    let (family, params) = match text.split_once(':') {
        Some((f, p)) => (f, Some(p)),
        None => (text, None),
    };
    let nums = |p: &str| -> Result<Vec<f64>> { p.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect() };
    let as_config = |e: Error| Error::InvalidArgument(e.to_string());
    match (family.trim().to_ascii_lowercase().as_str(), params) {
        ("normal", None) => Ok(DistSpec::std_normal()),
        ("normal", Some(p)) => match nums(p)?[..] {
            [m, s] => DistSpec::normal(m, s).map_err(as_config),
            _ => Err(bad()),
        },
        ("gamma", Some(p)) => match nums(p)?[..] {
            [a, b] => Ok(DistSpec::gamma(a, b).map_err(as_config)?.centered()),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn echo<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn emit(report: &RunReport, out: Option<&PathBuf>, table: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) if p.as_os_str() == "-" => writeln!(stdout, "{}", report.to_json()?)?,
        Some(p) => {
            report.write(p)?;
            write!(stdout, "{table}")?;
        }
        None => write!(stdout, "{table}")?,
    }
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<RunReport> {
    let start = Instant::now();
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Error::InvalidArgument(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    if args.bootstrap == 1 {
        return Err(Error::InvalidArgument("--bootstrap needs at least 2 resamples (or 0 to skip)".into()));
    }
    let spec = ModelSpec::new(&args.outcome, &args.exog, &args.endog)?;
    let data = ingest_csv(&args.data, &spec)?;
    let model = spec.bind(&data)?;
    let mut report = RunReport::new("fit", echo(args), Some(args.seed));
    report.dataset = Some(DatasetInfo { provenance: data.provenance.clone(), n: data.n(), dropped_rows: data.dropped_rows });

    let ols = fit_bound(EstimatorTag::Ols, &model)?;
    report.estimates.push(EstimateReport::new(&ols, None, None));
    let mut tags: Vec<EstimatorTag> = Vec::new();
    for &a in &args.estimator {
        let t = EstimatorTag::from(a);
        if t != EstimatorTag::Ols && !tags.contains(&t) {
            tags.push(t);
        }
    }
    for (i, &tag) in tags.iter().enumerate() {
        let mut est = fit_bound(tag, &model)?;
        let classical = est.se();
        let boot = if args.bootstrap >= 2 {
            let b = pairs_bootstrap_bound(&model, tag, args.bootstrap, RngStream::new(args.seed, i as u64), args.level)?;
            b.apply_to(&mut est)?;
            if b.failed > 0 {
                report.warnings.push(format!("{}: {} of {} bootstrap resamples were degenerate and dropped", tag.label(), b.failed, b.b));
            }
            if b.extreme_draws > 0 {
                report.warnings.push(format!(
                    "{}: {} bootstrap draws lie more than 10 interquartile ranges from the median; standard errors may be unreliable",
                    tag.label(),
                    b.extreme_draws
                ));
            }
            Some(b)
        } else {
            None
        };
        if !est.converged {
            report.warnings.push(format!("{} optimisation hit its evaluation limit", tag.label()));
        }
        let classical = if boot.is_some() { classical } else { None };
        report.estimates.push(EstimateReport::new(&est, boot.as_ref(), classical.as_deref()));
    }

    if model.m() == 1 {
        let cf = fit_bound(EstimatorTag::Npcf, &model)?;
        report.tests.push(NamedTest { name: "exogeneity".into(), result: exogeneity_from_fit(&cf)? });
    } else {
        report.warnings.push("exogeneity test skipped: it handles one endogenous regressor".into());
    }
    let fs = first_stage(&model.x, &model.z)?;
    if model.n() >= 20 {
        for (j, t) in identification_diagnostic(&fs)?.into_iter().enumerate() {
            if t.p_value > 0.05 {
                report.warnings.push(format!(
                    "first-stage residuals of `{}` are compatible with normality (p = {:.3}); the correction may be weakly identified",
                    model.z_names[j], t.p_value
                ));
            }
            report.diagnostics.push(NamedTest { name: format!("normality:{}", model.z_names[j]), result: t });
        }
    } else {
        report.warnings.push("normality diagnostic skipped: fewer than 20 observations".into());
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn dgp_config(dgp: u8, n: usize, edist: EDistArg, delta: f64, alpha: f64, rho: f64) -> DgpConfig {
    let e = EDist::from(edist).spec();
    if dgp == 1 {
        DgpConfig::dgp1(n, e, delta, rho)
    } else {
        DgpConfig::dgp2(n, e, alpha, rho)
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunReport> {
    let start = Instant::now();
    let cfg = dgp_config(args.dgp, args.n, args.edist, args.delta, args.alpha, args.rho);
    let tags: Vec<EstimatorTag> = args.estimators.iter().map(|&e| e.into()).collect();
    let master = RngStream::new(args.seed, 0);
    let summary = mc_run(&cfg, &tags, args.reps, args.b, master)?;
    if let Some(path) = &args.dump {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["estimator", "draw", "coefficient", "estimate"])?;
        for &t in EstimatorTag::ALL.iter().filter(|t| tags.contains(t)) {
            let (draws, _) = mc_draws(&cfg, t, args.reps, master)?;
            let names = theta_names(t);
            for i in 0..draws.nrows() {
                for (j, name) in names.iter().enumerate() {
                    w.write_record([t.cli_name(), &i.to_string(), name, &draws[(i, j)].to_string()])?;
                }
            }
        }
        w.flush()?;
    }
    let mut report = RunReport::new("simulate", echo(args), Some(args.seed));
    for (t, f) in summary.failures.iter().chain(&summary.test_failures) {
        if *f > 0 {
            report.warnings.push(format!("{}: {} repetitions failed", t.label(), f));
        }
    }
    report.simulation = Some(summary);
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn theta_names(t: EstimatorTag) -> Vec<&'static str> {
    if t.has_correction() {
        vec!["(Intercept)", "x", "z", "rho:z"]
    } else {
        vec!["(Intercept)", "x", "z"]
    }
}

pub fn cmd_constants(args: &ConstantsArgs) -> Result<RunReport> {
    let start = Instant::now();
    let f = parse_dist(&args.dist)?;
    let quad = QuadratureSpec::new(args.tol, QuadratureSpec::default().max_subdivisions).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let c = constants_c(&f, quad)?;
    let sides = lemma_b_sides(&f, quad)?;
    let mut report = RunReport::new("constants", echo(args), None);
    report.constants = Some(ConstantsReport::new(f.label(), &c, sides, schur_margin(c.sigma_e2, c.c2)));
    if f.is_normal() {
        report.warnings.push("Gaussian error: the control function is collinear with the endogenous regressor".into());
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<RunReport> {
    let cfg = dgp_config(args.dgp, args.n, args.edist, args.delta, args.alpha, args.rho);
    let data = generate(&cfg, RngStream::new(args.seed, 0))?;
    data.write_csv(&args.out)?;
    let mut report = RunReport::new("generate", echo(args), Some(args.seed));
    report.dataset = Some(DatasetInfo { provenance: data.provenance.clone(), n: data.n(), dropped_rows: 0 });
    Ok(report)
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Fit(a) => {
            let r = cmd_fit(a)?;
            emit(&r, a.out.as_ref(), &fit_table(&r), stdout)
        }
        Command::Simulate(a) => {
            let r = cmd_simulate(a)?;
            let table = mc_table(r.simulation.as_ref().expect("simulate fills the summary"));
            emit(&r, a.out.as_ref(), &table, stdout)
        }
        Command::Constants(a) => {
            let r = cmd_constants(a)?;
            let table = constants_table(r.constants.as_ref().expect("constants filled"));
            emit(&r, a.out.as_ref(), &table, stdout)
        }
        Command::Generate(a) => {
            let r = cmd_generate(a)?;
            let n = r.dataset.as_ref().map_or(0, |d| d.n);
            writeln!(stdout, "wrote {n} rows to {}", a.out.display())?;
            Ok(())
        }
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 for usage and input errors, 3 for numerical failures.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(stderr, "{e}") } else { write!(stdout, "{e}") };
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dist_parsing() {
        assert!(parse_dist("normal").unwrap().is_normal());
        let g = parse_dist("gamma:3,2").unwrap();
        assert!(g.centered && g.mean().abs() < 1e-12);
        for bad in ["gamma", "gamma:3", "gamma:-1,2", "beta:1,1", "normal:0,0"] {
            assert!(matches!(parse_dist(bad), Err(Error::InvalidArgument(_))), "{bad}");
        }
    }

    #[test]
    fn usage_errors_exit_with_two() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["endofix", "fit"], &mut o, &mut e), 2);
        assert_eq!(run(["endofix", "simulate", "--dgp", "3"], &mut o, &mut e), 2);
        assert_eq!(run(["endofix", "--version"], &mut o, &mut e), 0);
    }

    #[test]
    fn constants_normal() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["endofix", "constants", "--dist", "normal", "--out", "-"], &mut o, &mut e), 0);
        let r = RunReport::from_json(std::str::from_utf8(&o).unwrap()).unwrap();
        let c = r.constants.unwrap();
        assert!((c.c1 - 1.0).abs() < 1e-8 && (c.c2 - 1.0).abs() < 1e-8);
        assert!(c.lemma_b_residual < 1e-6 && c.singularity_margin < 1e-8);
    }
}
