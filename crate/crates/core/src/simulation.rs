//! Data generating processes and the Monte Carlo runner.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{constants_c, sigma_from_constants, MomentSet, SigmaAsymptotic};
use crate::data::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::estimators::{fit_bound, EstimatorTag};
use crate::inference::{exogeneity_from_fit, pairs_bootstrap_bound, t_test};
use crate::numerics::{sample, std_normal_quantile, DistFamily, DistSpec, MvNormal, QuadratureSpec, RngStream};

pub const DEFAULT_N: usize = 250;
pub const DEFAULT_REPS: usize = 500;
pub const DEFAULT_B: usize = 99;
pub const TEST_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Dgp1,
    Dgp2,
}

/// Named first-stage error distributions of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EDist {
    G11,
    G32,
}

impl EDist {
    pub fn spec(self) -> DistSpec {
        match self {
            EDist::G11 => DistSpec::gamma(1.0, 1.0),
            EDist::G32 => DistSpec::gamma(3.0, 2.0),
        }
        .expect("valid preset")
    }
}

impl FromStr for EDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g11" => Ok(EDist::G11),
            "g32" => Ok(EDist::G32),
            _ => Err(Error::InvalidArgument(format!("unknown error distribution `{s}` (expected g11 or g32)"))),
        }
    }
}

impl fmt::Display for EDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EDist::G11 => "g11",
            EDist::G32 => "g32",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub kind: DgpKind,
    pub n: usize,
    /// Distribution of the first-stage error e (gamma family).
    pub e_dist: DistSpec,
    pub delta: f64,
    pub alpha: f64,
    pub rho: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub gamma: f64,
    /// DGP1 only: divide δx + e by its population standard deviation.
    pub standardize_z: bool,
}

impl DgpConfig {
    pub fn dgp1(n: usize, e_dist: DistSpec, delta: f64, rho: f64) -> Self {
        Self { kind: DgpKind::Dgp1, n, e_dist, delta, alpha: 0.0, rho, beta0: 1.0, beta1: -1.0, gamma: 1.0, standardize_z: true }
    }

    pub fn dgp2(n: usize, e_dist: DistSpec, alpha: f64, rho: f64) -> Self {
        Self { kind: DgpKind::Dgp2, n, e_dist, delta: 0.0, alpha, rho, beta0: 1.0, beta1: -1.0, gamma: 1.0, standardize_z: false }
    }

    pub fn validate(&self) -> Result<()> {
        let (shape, rate) = self.gamma_params()?;
        if !(shape > 0.0 && rate > 0.0) {
            return Err(Error::InvalidArgument("gamma parameters must be positive".into()));
        }
        if self.n < 6 {
            return Err(Error::InvalidArgument(format!("sample size {} is too small (need n >= 6)", self.n)));
        }
        let finite = [self.delta, self.alpha, self.rho, self.beta0, self.beta1, self.gamma];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design parameters must be finite".into()));
        }
        if self.kind == DgpKind::Dgp2 && !(self.alpha.abs() < 1.0 && self.rho.abs() < 1.0 && self.alpha.powi(2) + self.rho.powi(2) < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "copula correlation matrix is not positive definite for alpha = {}, rho = {} (need alpha^2 + rho^2 < 1)",
                self.alpha, self.rho
            )));
        }
        Ok(())
    }

    fn gamma_params(&self) -> Result<(f64, f64)> {
        match (&self.e_dist.family, self.e_dist.centered) {
            (DistFamily::Gamma { shape, rate }, false) => Ok((*shape, *rate)),
            _ => Err(Error::InvalidArgument(format!("the simulation designs need an uncentered gamma error, got {}", self.e_dist.label()))),
        }
    }

    /// Population sd that divides δx + e in DGP1 (1 when not standardizing).
    pub fn z_scale(&self) -> f64 {
        if self.kind == DgpKind::Dgp1 && self.standardize_z {
            (self.delta * self.delta * X_VAR + self.e_dist.variance()).sqrt()
        } else {
            1.0
        }
    }

    /// True (β₀, β₁, γ, ρ) for DGP1. DGP2 has no exact control-function
    /// representation, so only (β₀, β₁, γ) are meaningful there.
    pub fn true_theta(&self) -> Vec<f64> {
        vec![self.beta0, self.beta1, self.gamma, self.rho]
    }

    pub fn model_spec() -> ModelSpec {
        ModelSpec::new("y", &["x"], &["z"]).expect("fixed layout")
    }

    pub fn describe(&self) -> String {
        match self.kind {
            DgpKind::Dgp1 => format!("DGP1 n={} e~{} delta={} rho={}", self.n, self.e_dist.label(), self.delta, self.rho),
            DgpKind::Dgp2 => format!("DGP2 n={} e~{} alpha={} rho={}", self.n, self.e_dist.label(), self.alpha, self.rho),
        }
    }
}

/// The exogenous regressor is Γ(1,1) in both designs.
const X_SHAPE: f64 = 1.0;
const X_RATE: f64 = 1.0;
const X_VAR: f64 = X_SHAPE / (X_RATE * X_RATE);

fn x_dist() -> DistSpec {
    DistSpec::gamma(X_SHAPE, X_RATE).expect("valid")
}

/// Φ⁻¹(F(v)) through whichever tail is smaller.
fn true_score(f: &DistSpec, v: f64) -> f64 {
    let lo = f.cdf(v);
    if lo <= 0.5 {
        std_normal_quantile(lo.max(f64::MIN_POSITIVE)).expect("open interval")
    } else {
        -std_normal_quantile(f.sf(v).max(f64::MIN_POSITIVE)).expect("open interval")
    }
}

fn assemble(cfg: &DgpConfig, x: Vec<f64>, z: Vec<f64>, e: Vec<f64>, eta: Vec<f64>, u: Vec<f64>) -> Result<Dataset> {
    let y: Vec<f64> = (0..cfg.n).map(|i| cfg.beta0 + cfg.beta1 * x[i] + cfg.gamma * z[i] + u[i]).collect();
    Dataset::new(
        ["y", "x", "z", "e", "eta", "u"].iter().map(|s| s.to_string()).collect(),
        vec![y, x, z, e, eta, u],
        cfg.describe(),
    )
}

/// DGP1: x, e independent gamma; z = δx + e (standardized by default);
/// η = Φ⁻¹(F_e(e)) with the true CDF; u = ρη + ε. The dataset carries the
/// columns y, x, z plus the latent e, eta and u.
pub fn gen_dgp1(cfg: &DgpConfig, stream: RngStream) -> Result<Dataset> {
    if cfg.kind != DgpKind::Dgp1 {
        return Err(Error::InvalidArgument("gen_dgp1 called with a DGP2 configuration".into()));
    }
    cfg.validate()?;
    let x = sample(stream.child(0), &x_dist(), cfg.n)?;
    let e = sample(stream.child(1), &cfg.e_dist, cfg.n)?;
    let eps = sample(stream.child(2), &DistSpec::std_normal(), cfg.n)?;
    let s = cfg.z_scale();
    let z: Vec<f64> = (0..cfg.n).map(|i| (cfg.delta * x[i] + e[i]) / s).collect();
    let eta: Vec<f64> = e.iter().map(|&v| true_score(&cfg.e_dist, v)).collect();
    let u: Vec<f64> = (0..cfg.n).map(|i| cfg.rho * eta[i] + eps[i]).collect();
    assemble(cfg, x, z, e, eta, u)
}

/// Correlation matrix of (e*, x*, u) in DGP2.
pub fn dgp2_xi(alpha: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, alpha, rho, alpha, 1.0, 0.0, rho, 0.0, 1.0])
}

/// DGP2: (e*, x*, u) trivariate normal with correlation Ξ(α, ρ);
/// e = F_e⁻¹(Φ(e*)), x = F_x⁻¹(Φ(x*)) with F_x = Γ(1,1); z = e.
pub fn gen_dgp2(cfg: &DgpConfig, stream: RngStream) -> Result<Dataset> {
    if cfg.kind != DgpKind::Dgp2 {
        return Err(Error::InvalidArgument("gen_dgp2 called with a DGP1 configuration".into()));
    }
    cfg.validate()?;
    let mvn = MvNormal::new(DVector::zeros(3), dgp2_xi(cfg.alpha, cfg.rho))?;
    let draws = mvn.sample(stream.child(0), cfg.n);
    let xd = x_dist();
    let e: Vec<f64> = draws.column(0).iter().map(|&t| cfg.e_dist.quantile_at_normal(t)).collect();
    let x: Vec<f64> = draws.column(1).iter().map(|&t| xd.quantile_at_normal(t)).collect();
    let eta: Vec<f64> = draws.column(0).iter().copied().collect();
    let u: Vec<f64> = draws.column(2).iter().copied().collect();
    assemble(cfg, x, e.clone(), e, eta, u)
}

pub fn generate(cfg: &DgpConfig, stream: RngStream) -> Result<Dataset> {
    match cfg.kind {
        DgpKind::Dgp1 => gen_dgp1(cfg, stream),
        DgpKind::Dgp2 => gen_dgp2(cfg, stream),
    }
}

/// Monte Carlo statistics for one coefficient of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefStats {
    pub estimator: EstimatorTag,
    pub coefficient: String,
    pub truth: f64,
    pub bias: f64,
    /// Standard deviation with divisor equal to the number of successful repetitions.
    pub std: f64,
    pub rmse: f64,
    /// Rejection rate of the 5% t-test of the true value; absent when no tests ran.
    pub size: Option<f64>,
    pub reps_ok: usize,
    pub tests_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub config: DgpConfig,
    pub reps: usize,
    pub b: usize,
    pub master: RngStream,
    pub stats: Vec<CoefStats>,
    /// Repetitions in which the estimator itself failed, per estimator. An
    /// estimator that failed in every repetition has no rows in `stats`.
    pub failures: Vec<(EstimatorTag, usize)>,
    /// Repetitions in which the bootstrap failed although the fit succeeded.
    pub test_failures: Vec<(EstimatorTag, usize)>,
}

impl McSummary {
    pub fn get(&self, tag: EstimatorTag, coefficient: &str) -> Option<&CoefStats> {
        self.stats.iter().find(|s| s.estimator == tag && s.coefficient == coefficient)
    }
}

/// Coefficients reported in the simulation tables.
const TABLE_COEFS: [(&str, usize); 2] = [("x", 1), ("z", 2)];

struct RepOutcome {
    /// (β₁, γ) estimates.
    est: [f64; 2],
    /// Per-coefficient test rejection, if the test ran.
    reject: Option<[bool; 2]>,
}

fn table_truth(cfg: &DgpConfig) -> [f64; 2] {
    [cfg.beta1, cfg.gamma]
}

fn stream_index(tag: EstimatorTag) -> u64 {
    1 + EstimatorTag::ALL.iter().position(|&t| t == tag).expect("known tag") as u64
}

fn run_one(cfg: &DgpConfig, tag: EstimatorTag, data: &Dataset, b: usize, stream: RngStream) -> Result<Option<RepOutcome>> {
    let model = DgpConfig::model_spec().bind(data)?;
    let fit = match fit_bound(tag, &model) {
        Ok(f) => f,
        Err(e) if is_soft(&e) => return Ok(None),
        Err(e) => return Err(e),
    };
    let truth = table_truth(cfg);
    let est = [fit.theta[TABLE_COEFS[0].1], fit.theta[TABLE_COEFS[1].1]];
    let se = if tag == EstimatorTag::Ols {
        fit.se()
    } else if b >= 2 {
        match pairs_bootstrap_bound(&model, tag, b, stream, 0.95) {
            Ok(r) => Some(r.se),
            Err(e) if is_soft(&e) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let reject = match se {
        Some(se) => {
            let mut r = [false; 2];
            for (j, (name, idx)) in TABLE_COEFS.iter().enumerate() {
                match t_test(est[j], se[*idx], truth[j], name) {
                    Ok(t) => r[j] = t.p_value < TEST_LEVEL,
                    Err(_) => return Ok(Some(RepOutcome { est, reject: None })),
                }
            }
            Some(r)
        }
        None => None,
    };
    Ok(Some(RepOutcome { est, reject }))
}

fn is_soft(e: &Error) -> bool {
    matches!(e, Error::RankDeficient { .. } | Error::ConstantInput(_) | Error::Identification { .. } | Error::ExcessiveDegeneracy { .. })
}

/// Repeats generate → fit → test `reps` times. Repetition `r` draws its data
/// from `master.child(r).child(0)` and estimator `t`'s bootstrap from
/// `master.child(r).child(1 + index(t))`, so the summary does not depend on
/// thread count or on the order of `estimators`.
pub fn mc_run(cfg: &DgpConfig, estimators: &[EstimatorTag], reps: usize, b: usize, master: RngStream) -> Result<McSummary> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!("Monte Carlo needs reps >= 2, got {reps}")));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    if b == 1 {
        return Err(Error::InvalidArgument("the bootstrap needs B >= 2 resamples (or B = 0 to skip)".into()));
    }
    cfg.validate()?;
    let mut tags: Vec<EstimatorTag> = Vec::new();
    for t in EstimatorTag::ALL {
        if estimators.contains(&t) {
            tags.push(t);
        }
    }

    let per_rep: Vec<Result<Vec<Option<RepOutcome>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rs = master.child(r as u64);
            let data = generate(cfg, rs.child(0))?;
            tags.par_iter().map(|&t| run_one(cfg, t, &data, b, rs.child(stream_index(t)))).collect()
        })
        .collect();
    let mut outcomes = Vec::with_capacity(reps);
    for r in per_rep {
        outcomes.push(r?);
    }

    let truth = table_truth(cfg);
    let mut stats = Vec::new();
    let mut failures = Vec::new();
    let mut test_failures = Vec::new();
    for (ti, &tag) in tags.iter().enumerate() {
        let ok: Vec<&RepOutcome> = outcomes.iter().filter_map(|o| o[ti].as_ref()).collect();
        failures.push((tag, reps - ok.len()));
        let expect_tests = tag == EstimatorTag::Ols || b >= 2;
        let tested: Vec<[bool; 2]> = ok.iter().filter_map(|o| o.reject).collect();
        test_failures.push((tag, if expect_tests { ok.len() - tested.len() } else { 0 }));
        if ok.is_empty() {
            continue;
        }
        for (j, (name, _)) in TABLE_COEFS.iter().enumerate() {
            let vals: Vec<f64> = ok.iter().map(|o| o.est[j]).collect();
            let (bias, std, rmse) = moments(&vals, truth[j]);
            let size = if tested.is_empty() {
                None
            } else {
                Some(tested.iter().filter(|r| r[j]).count() as f64 / tested.len() as f64)
            };
            stats.push(CoefStats {
                estimator: tag,
                coefficient: name.to_string(),
                truth: truth[j],
                bias,
                std,
                rmse,
                size,
                reps_ok: vals.len(),
                tests_run: tested.len(),
            });
        }
    }
    Ok(McSummary { config: cfg.clone(), reps, b, master, stats, failures, test_failures })
}

/// (bias, std, rmse) with divisor `len`, so rmse² = bias² + std².
fn moments(vals: &[f64], truth: f64) -> (f64, f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let bias = mean - truth;
    (bias, var.sqrt(), (bias * bias + var).sqrt())
}

/// Raw per-repetition coefficient vectors of one estimator (successful
/// repetitions × p), with the number of failed repetitions.
pub fn mc_draws(cfg: &DgpConfig, tag: EstimatorTag, reps: usize, master: RngStream) -> Result<(DMatrix<f64>, usize)> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!("Monte Carlo needs reps >= 2, got {reps}")));
    }
    cfg.validate()?;
    let spec = DgpConfig::model_spec();
    let rows: Vec<Result<Option<Vec<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = generate(cfg, master.child(r as u64).child(0))?;
            match fit_bound(tag, &spec.bind(&data)?) {
                Ok(f) => Ok(Some(f.theta.as_slice().to_vec())),
                Err(e) if is_soft(&e) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut ok = Vec::with_capacity(reps);
    for r in rows {
        if let Some(v) = r? {
            ok.push(v);
        }
    }
    if ok.is_empty() {
        return Err(Error::ExcessiveDegeneracy { failed: reps, requested: reps });
    }
    let p = ok[0].len();
    let failed = reps - ok.len();
    Ok((DMatrix::from_fn(ok.len(), p, |i, j| ok[i][j]), failed))
}

/// Rejection rate of the 5% exogeneity test over `reps` repetitions, with
/// the number of repetitions in which the control-function fit failed.
pub fn mc_exogeneity_size(cfg: &DgpConfig, reps: usize, master: RngStream) -> Result<(f64, usize)> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!("Monte Carlo needs reps >= 2, got {reps}")));
    }
    cfg.validate()?;
    let spec = DgpConfig::model_spec();
    let res: Vec<Result<Option<bool>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = generate(cfg, master.child(r as u64).child(0))?;
            let fit = match fit_bound(EstimatorTag::Npcf, &spec.bind(&data)?) {
                Ok(f) => f,
                Err(e) if is_soft(&e) => return Ok(None),
                Err(e) => return Err(e),
            };
            Ok(Some(exogeneity_from_fit(&fit)?.p_value < TEST_LEVEL))
        })
        .collect();
    let (mut rej, mut ran) = (0usize, 0usize);
    for r in res {
        if let Some(x) = r? {
            ran += 1;
            rej += x as usize;
        }
    }
    if ran == 0 {
        return Err(Error::ExcessiveDegeneracy { failed: reps, requested: reps });
    }
    Ok((rej as f64 / ran as f64, reps - ran))
}

/// Population asymptotic covariance of the control-function estimator under
/// DGP1 with Γ(1,1) regressor and standard normal ε. The first-stage error
/// entering the formula is the centred, rescaled e/s, and the first-stage
/// coefficients are (E[e]/s, δ/s).
pub fn dgp1_sigma(cfg: &DgpConfig, quad: QuadratureSpec) -> Result<SigmaAsymptotic> {
    if cfg.kind != DgpKind::Dgp1 {
        return Err(Error::InvalidArgument("the asymptotic covariance is available for DGP1 only".into()));
    }
    cfg.validate()?;
    let (shape, rate) = cfg.gamma_params()?;
    let s = cfg.z_scale();
    let f = DistSpec::gamma(shape, rate * s)?.centered();
    let c = constants_c(&f, quad)?;
    let mean_x = X_SHAPE / X_RATE;
    let sigma_x = DMatrix::from_row_slice(2, 2, &[1.0, mean_x, mean_x, X_VAR + mean_x * mean_x]);
    let mu_x = DVector::from_column_slice(&[1.0, mean_x]);
    let moments = MomentSet::homoskedastic(sigma_x, mu_x, &c, 1.0)?;
    let delta = [cfg.e_dist.mean() / s, cfg.delta / s];
    sigma_from_constants(&c, &delta, cfg.rho, &moments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..a.len() {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma).powi(2);
            sbb += (b[i] - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    fn col<'a>(d: &'a Dataset, c: &str) -> &'a [f64] {
        d.column(c).unwrap()
    }

    #[test]
    fn dgp1_exogenous_design_is_uncorrelated() {
        let cfg = DgpConfig::dgp1(100_000, EDist::G11.spec(), 0.0, 0.0);
        let d = gen_dgp1(&cfg, RngStream::new(1, 0)).unwrap();
        assert!(corr(col(&d, "z"), col(&d, "u")).abs() < 0.01);
    }

    #[test]
    fn dgp1_error_correlation_matches_variance_formula() {
        let cfg = DgpConfig::dgp1(100_000, EDist::G11.spec(), 1.0, 0.9);
        let d = gen_dgp1(&cfg, RngStream::new(2, 0)).unwrap();
        let want = 0.9 / (0.81f64 + 1.0).sqrt();
        assert!((corr(col(&d, "u"), col(&d, "eta")) - want).abs() < 0.02);
    }

    #[test]
    fn dgp1_exponential_error_skewness() {
        let cfg = DgpConfig::dgp1(1_000_000, EDist::G11.spec(), 0.0, 0.0);
        let e = gen_dgp1(&cfg, RngStream::new(3, 0)).unwrap().column("e").unwrap().to_vec();
        let n = e.len() as f64;
        let m = e.iter().sum::<f64>() / n;
        let m2 = e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3 = e.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        assert!((m3 / m2.powf(1.5) - 2.0).abs() < 0.1);
    }

    #[test]
    fn dgp1_standardization_gives_unit_variance_z() {
        let cfg = DgpConfig::dgp1(200_000, EDist::G32.spec(), 1.0, 0.5);
        let d = gen_dgp1(&cfg, RngStream::new(4, 0)).unwrap();
        let z = col(&d, "z");
        let n = z.len() as f64;
        let m = z.iter().sum::<f64>() / n;
        let v = z.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn dgp2_independent_when_uncorrelated() {
        let cfg = DgpConfig::dgp2(100_000, EDist::G11.spec(), 0.0, 0.0);
        let d = gen_dgp2(&cfg, RngStream::new(5, 0)).unwrap();
        let (x, e, u) = (col(&d, "x"), col(&d, "e"), col(&d, "u"));
        assert!(corr(x, e).abs() < 0.01 && corr(x, u).abs() < 0.01 && corr(e, u).abs() < 0.01);
    }

    #[test]
    fn dgp2_rank_correlation_matches_gaussian_copula() {
        let cfg = DgpConfig::dgp2(100_000, EDist::G11.spec(), 0.5, 0.5);
        let d = gen_dgp2(&cfg, RngStream::new(6, 0)).unwrap();
        let rx = crate::transform::average_ranks(col(&d, "x")).unwrap();
        let re = crate::transform::average_ranks(col(&d, "e")).unwrap();
        let want = 6.0 * (0.25f64).asin() / std::f64::consts::PI;
        assert!((corr(&rx, &re) - want).abs() < 0.02);
    }

    #[test]
    fn dgp2_marginal_is_the_configured_gamma() {
        let cfg = DgpConfig::dgp2(100_000, EDist::G32.spec(), 0.5, 0.5);
        let d = gen_dgp2(&cfg, RngStream::new(7, 0)).unwrap();
        let mut e = col(&d, "e").to_vec();
        e.sort_by(f64::total_cmp);
        let n = e.len() as f64;
        let f = EDist::G32.spec();
        let ks = e
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = f.cdf(v);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.005, "{ks}");
    }

    #[test]
    fn dgp2_rejects_non_pd_correlation() {
        let cfg = DgpConfig::dgp2(100, EDist::G11.spec(), 0.8, 0.8);
        assert!(matches!(gen_dgp2(&cfg, RngStream::new(1, 0)), Err(Error::InvalidArgument(_))));
        let mut c = DgpConfig::dgp1(100, DistSpec::std_normal(), 0.0, 0.0);
        assert!(gen_dgp1(&c, RngStream::new(1, 0)).is_err());
        c.e_dist = EDist::G11.spec();
        assert!(gen_dgp2(&c, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn rmse_identity_and_determinism() {
        let cfg = DgpConfig::dgp1(120, EDist::G11.spec(), 1.0, 0.5);
        let tags = [EstimatorTag::Ols, EstimatorTag::Npcf, EstimatorTag::TwoScope];
        let a = mc_run(&cfg, &tags, 2, 9, RngStream::new(11, 0)).unwrap();
        for s in &a.stats {
            assert!((s.rmse.powi(2) - s.bias.powi(2) - s.std.powi(2)).abs() < 1e-10);
            if let Some(p) = s.size {
                assert!((0.0..=1.0).contains(&p));
            }
        }
        let rev = [EstimatorTag::TwoScope, EstimatorTag::Npcf, EstimatorTag::Ols];
        let b = mc_run(&cfg, &rev, 2, 9, RngStream::new(11, 0)).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| mc_run(&cfg, &tags, 2, 9, RngStream::new(11, 0)).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn exogenous_design_bias_is_within_monte_carlo_error() {
        let cfg = DgpConfig::dgp1(250, EDist::G11.spec(), 0.0, 0.0);
        let tags = [EstimatorTag::Ols, EstimatorTag::Npcf, EstimatorTag::TwoScope];
        let s = mc_run(&cfg, &tags, 200, 0, RngStream::new(12, 0)).unwrap();
        for t in tags {
            let g = s.get(t, "z").unwrap();
            assert!(g.bias.abs() < 3.0 * g.std / (g.reps_ok as f64).sqrt(), "{t}: {g:?}");
            if t != EstimatorTag::Ols {
                assert!(g.size.is_none());
            }
        }
        assert!(s.get(EstimatorTag::Ols, "z").unwrap().size.is_some());
    }

    #[test]
    fn mc_rejects_bad_arguments() {
        let cfg = DgpConfig::dgp1(50, EDist::G11.spec(), 0.0, 0.0);
        assert!(mc_run(&cfg, &[EstimatorTag::Npcf], 1, 0, RngStream::new(1, 0)).is_err());
        assert!(mc_run(&cfg, &[EstimatorTag::Npcf], 5, 1, RngStream::new(1, 0)).is_err());
        assert!(mc_run(&cfg, &[], 5, 0, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn asymptotic_inputs_match_simulated_moments() {
        // closed-form moment inputs against sample moments of one large draw
        let cfg = DgpConfig::dgp1(400_000, EDist::G32.spec(), 1.0, 0.9);
        let sig = dgp1_sigma(&cfg, QuadratureSpec::default()).unwrap();
        let d = gen_dgp1(&cfg, RngStream::new(13, 0)).unwrap();
        let s = cfg.z_scale();
        let mean_e = cfg.e_dist.mean();
        let e: Vec<f64> = col(&d, "e").iter().map(|v| (v - mean_e) / s).collect();
        let n = e.len() as f64;
        let se2 = e.iter().map(|v| v * v).sum::<f64>() / n;
        assert!((se2 - sig.constants.sigma_e2).abs() < 0.01 * sig.constants.sigma_e2);
        let c2 = e.iter().zip(col(&d, "eta")).map(|(a, b)| a * b).sum::<f64>() / n;
        assert!((c2 - sig.constants.c2).abs() < 0.01);
        let x = col(&d, "x");
        let z = col(&d, "z");
        let ez = z.iter().sum::<f64>() / n;
        let exz = x.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / n;
        assert!((sig.m[(0, 2)] - ez).abs() < 0.01 && (sig.m[(1, 2)] - exz).abs() < 0.02);
    }
}
