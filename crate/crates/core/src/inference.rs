//! Pairs bootstrap, t-tests and the first-stage normality diagnostic.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BoundModel, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::estimators::{fit_bound, EstimatorTag, ThetaEstimate, VcovSource};
use crate::numerics::{std_normal_sf, RngStream};
use crate::transform::FirstStage;

pub const DEFAULT_BOOTSTRAP: usize = 199;
pub const DEFAULT_LEVEL: f64 = 0.95;
/// Draws farther than this many interquartile ranges from the median count as extreme.
pub const EXTREME_IQR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub tag: EstimatorTag,
    /// Successful resamples × coefficients, in resample order.
    pub draws: DMatrix<f64>,
    pub se: Vec<f64>,
    pub percentile_ci: Vec<(f64, f64)>,
    pub level: f64,
    /// Requested number of resamples.
    pub b: usize,
    /// Resamples dropped because the fit was degenerate.
    pub failed: usize,
    /// Successful draws with at least one coefficient beyond the extreme-draw fence.
    pub extreme_draws: usize,
    pub seed: RngStream,
}

impl BootstrapResult {
    /// Covariance of the draws with divisor `B - 1`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let (b, p) = self.draws.shape();
        let means: Vec<f64> = (0..p).map(|j| self.draws.column(j).mean()).collect();
        let mut cov = DMatrix::zeros(p, p);
        for i in 0..b {
            for j in 0..p {
                let dj = self.draws[(i, j)] - means[j];
                for l in 0..=j {
                    cov[(j, l)] += dj * (self.draws[(i, l)] - means[l]);
                }
            }
        }
        for j in 0..p {
            for l in 0..=j {
                cov[(j, l)] /= (b - 1) as f64;
                cov[(l, j)] = cov[(j, l)];
            }
        }
        cov
    }

    /// Attaches the bootstrap covariance to `fit`.
    pub fn apply_to(&self, fit: &mut ThetaEstimate) -> Result<()> {
        if fit.len() != self.draws.ncols() {
            return Err(Error::InvalidArgument("bootstrap draws do not match the fitted coefficient vector".into()));
        }
        fit.vcov = Some(self.covariance());
        fit.vcov_source = Some(VcovSource::Bootstrap);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub null_description: String,
}

/// Errors that mark a resample as degenerate rather than aborting the run.
fn is_degenerate(e: &Error) -> bool {
    matches!(e, Error::RankDeficient { .. } | Error::ConstantInput(_) | Error::Identification { .. })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples whole rows with replacement `b` times and refits `tag` from
/// scratch on each resample. Resample `i` draws from `seed.child(i)`, so the
/// result does not depend on the number of threads.
pub fn pairs_bootstrap(data: &Dataset, spec: &ModelSpec, tag: EstimatorTag, b: usize, seed: RngStream) -> Result<BootstrapResult> {
    pairs_bootstrap_bound(&spec.bind(data)?, tag, b, seed, DEFAULT_LEVEL)
}

pub fn pairs_bootstrap_bound(model: &BoundModel, tag: EstimatorTag, b: usize, seed: RngStream, level: f64) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("the bootstrap needs B >= 2 resamples, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let n = model.n();
    let fits: Vec<Result<Option<Vec<f64>>>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.child(i as u64).rng();
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let resample = model.select_rows(&rows)?;
            match fit_bound(tag, &resample) {
                Ok(f) => Ok(Some(f.theta.as_slice().to_vec())),
                Err(e) if is_degenerate(&e) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(b);
    let mut failed = 0;
    for f in fits {
        match f? {
            Some(t) => rows.push(t),
            None => failed += 1,
        }
    }
    if failed * 100 > b {
        return Err(Error::ExcessiveDegeneracy { failed, requested: b });
    }
    if rows.len() < 2 {
        return Err(Error::ExcessiveDegeneracy { failed, requested: b });
    }
    let p = rows[0].len();
    let draws = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);

    let alpha = 1.0 - level;
    let mut se = Vec::with_capacity(p);
    let mut ci = Vec::with_capacity(p);
    let mut extreme = vec![false; rows.len()];
    for j in 0..p {
        let mut col: Vec<f64> = draws.column(j).iter().copied().collect();
        col.sort_by(f64::total_cmp);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        se.push(var.sqrt());
        ci.push((quantile_sorted(&col, alpha / 2.0), quantile_sorted(&col, 1.0 - alpha / 2.0)));
        let med = quantile_sorted(&col, 0.5);
        let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
        for (i, flag) in extreme.iter_mut().enumerate() {
            if (draws[(i, j)] - med).abs() > EXTREME_IQR * iqr {
                *flag = true;
            }
        }
    }
    Ok(BootstrapResult {
        tag,
        draws,
        se,
        percentile_ci: ci,
        level,
        b,
        failed,
        extreme_draws: extreme.iter().filter(|&&f| f).count(),
        seed,
    })
}

/// t = (θ̂_j − null) / se_j with the bootstrap standard error, two-sided normal p-value.
pub fn bootstrap_t_test(fit: &ThetaEstimate, boot: &BootstrapResult, coef: usize, null_value: f64) -> Result<TestResult> {
    if boot.se.len() != fit.len() {
        return Err(Error::InvalidArgument("bootstrap result does not match the fit".into()));
    }
    if coef >= fit.len() {
        return Err(Error::InvalidArgument(format!("coefficient index {coef} out of range (p = {})", fit.len())));
    }
    t_test(fit.theta[coef], boot.se[coef], null_value, &fit.names[coef])
}

/// Two-sided normal-reference t-test of `estimate = null_value`.
pub fn t_test(estimate: f64, se: f64, null_value: f64, name: &str) -> Result<TestResult> {
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::Domain(format!("standard error of `{name}` is {se}; the t-statistic is undefined")));
    }
    let t = (estimate - null_value) / se;
    Ok(TestResult {
        statistic: t,
        p_value: (2.0 * std_normal_sf(t.abs())).min(1.0),
        null_description: format!("{name} = {null_value}"),
    })
}

/// t-test of a zero control-function coefficient with the classical OLS
/// standard error of the augmented regression.
pub fn exogeneity_test(data: &Dataset, spec: &ModelSpec) -> Result<TestResult> {
    exogeneity_test_bound(&spec.bind(data)?)
}

pub fn exogeneity_test_bound(model: &BoundModel) -> Result<TestResult> {
    if model.m() != 1 {
        return Err(Error::InvalidArgument("the exogeneity test handles exactly one endogenous regressor".into()));
    }
    let fit = fit_bound(EstimatorTag::Npcf, model)?;
    exogeneity_from_fit(&fit)
}

/// Exogeneity test read off an existing control-function fit with classical covariance.
pub fn exogeneity_from_fit(fit: &ThetaEstimate) -> Result<TestResult> {
    if fit.tag != EstimatorTag::Npcf || fit.vcov_source != Some(VcovSource::Classical) || fit.m != 1 {
        return Err(Error::InvalidArgument("exogeneity test needs a single-regressor control-function fit with classical covariance".into()));
    }
    let j = fit.rho_index(0).expect("control-function fits carry a correction block");
    let se = fit.se().expect("classical covariance present")[j];
    let mut r = t_test(fit.theta[j], se, 0.0, &fit.names[j])?;
    r.null_description = format!("{} = 0 (regressor exogenous)", fit.names[j]);
    Ok(r)
}

/// Jarque–Bera test of normality for each first-stage residual column. A
/// large p-value warns that the model may be weakly identified.
pub fn identification_diagnostic(fs: &FirstStage) -> Result<Vec<TestResult>> {
    (0..fs.m()).map(|j| jarque_bera(fs.e_hat.column(j).as_slice(), j)).collect()
}

fn jarque_bera(v: &[f64], column: usize) -> Result<TestResult> {
    let n = v.len();
    if n < 20 {
        return Err(Error::InvalidArgument(format!("the normality diagnostic needs n >= 20, got {n}")));
    }
    let nf = n as f64;
    let mean = v.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in v {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if !(m2 > 0.0) {
        return Err(Error::ConstantInput("first-stage residuals are constant".into()));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = nf / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    Ok(TestResult {
        statistic: jb,
        p_value: (-jb / 2.0).exp(),
        null_description: format!("first-stage residuals of endogenous column {} are normal", column + 1),
    })
}
