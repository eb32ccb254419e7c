//! The control-function estimator, its internal-IV form and the comparators.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::copula_mle;
use crate::data::{BoundModel, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::regress::{ols_fit, DesignMatrix, OlsFit, PivotedQr};
use crate::transform::{first_stage, normal_scores, FirstStage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    Ols,
    Npcf,
    IvInternal,
    TwoScope,
    GpCopula,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 5] =
        [EstimatorTag::Ols, EstimatorTag::Npcf, EstimatorTag::IvInternal, EstimatorTag::TwoScope, EstimatorTag::GpCopula];

    /// Short name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            EstimatorTag::Ols => "ols",
            EstimatorTag::Npcf => "npcf",
            EstimatorTag::IvInternal => "iv",
            EstimatorTag::TwoScope => "2scope",
            EstimatorTag::GpCopula => "gp",
        }
    }

    /// Column header used in tables.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorTag::Ols => "OLS",
            EstimatorTag::Npcf => "npCF",
            EstimatorTag::IvInternal => "IV",
            EstimatorTag::TwoScope => "2sCOPE",
            EstimatorTag::GpCopula => "GP",
        }
    }

    /// Whether the estimate carries a correction (ρ) block.
    pub fn has_correction(self) -> bool {
        self != EstimatorTag::Ols
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ols" => Ok(EstimatorTag::Ols),
            "npcf" => Ok(EstimatorTag::Npcf),
            "iv" | "iv_internal" => Ok(EstimatorTag::IvInternal),
            "2scope" | "two_scope" => Ok(EstimatorTag::TwoScope),
            "gp" | "gp_copula" => Ok(EstimatorTag::GpCopula),
            other => Err(Error::InvalidArgument(format!("unknown estimator `{other}` (expected ols|npcf|iv|2scope|gp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcovSource {
    Classical,
    Hc0,
    Bootstrap,
    AsymptoticOracle,
}

/// A fitted coefficient vector ordered as (β with intercept first, γ block, ρ block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub tag: EstimatorTag,
    pub theta: DVector<f64>,
    pub names: Vec<String>,
    /// Exogenous regressors including the intercept.
    pub k: usize,
    pub m: usize,
    pub vcov: Option<DMatrix<f64>>,
    pub vcov_source: Option<VcovSource>,
    pub first_stage: Option<FirstStage>,
    pub r_squared: Option<f64>,
    pub sigma2_hat: Option<f64>,
    /// Scale of the structural error (likelihood comparator only).
    pub sigma_u: Option<f64>,
    pub loglik: Option<f64>,
    /// False when an iterative fit hit its evaluation cap.
    pub converged: bool,
}

impl ThetaEstimate {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn beta(&self) -> &[f64] {
        &self.theta.as_slice()[..self.k]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.theta.as_slice()[self.k..self.k + self.m]
    }

    /// Empty for OLS.
    pub fn rho(&self) -> &[f64] {
        &self.theta.as_slice()[self.k + self.m..]
    }

    pub fn gamma_index(&self, j: usize) -> usize {
        self.k + j
    }

    pub fn rho_index(&self, j: usize) -> Option<usize> {
        (self.theta.len() > self.k + self.m).then_some(self.k + self.m + j)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Square roots of the covariance diagonal, when a covariance is attached.
    pub fn se(&self) -> Option<Vec<f64>> {
        self.vcov.as_ref().map(|v| v.diagonal().iter().map(|d| d.max(0.0).sqrt()).collect())
    }
}

/// Name of the control-function coefficient attached to endogenous column `z`.
pub fn correction_name(z: &str) -> String {
    format!("rho:{z}")
}

/// Fits `tag` on `data` under `spec`.
pub fn fit(tag: EstimatorTag, data: &Dataset, spec: &ModelSpec) -> Result<ThetaEstimate> {
    fit_bound(tag, &spec.bind(data)?)
}

/// Fits `tag` on already bound arrays; used by the bootstrap and the Monte Carlo runner.
pub fn fit_bound(tag: EstimatorTag, model: &BoundModel) -> Result<ThetaEstimate> {
    match tag {
        EstimatorTag::Ols => ols_bound(model),
        EstimatorTag::Npcf => npcf_bound(model),
        EstimatorTag::IvInternal => iv_internal_bound(model),
        EstimatorTag::TwoScope => two_scope_bound(model),
        EstimatorTag::GpCopula => copula_mle::gp_fit_bound(model),
    }
}

pub fn fit_ols(data: &Dataset, spec: &ModelSpec) -> Result<ThetaEstimate> {
    fit(EstimatorTag::Ols, data, spec)
}

pub fn fit_npcf(data: &Dataset, spec: &ModelSpec) -> Result<ThetaEstimate> {
    fit(EstimatorTag::Npcf, data, spec)
}

pub fn fit_iv_internal(data: &Dataset, spec: &ModelSpec) -> Result<ThetaEstimate> {
    fit(EstimatorTag::IvInternal, data, spec)
}

pub fn fit_two_scope(data: &Dataset, spec: &ModelSpec) -> Result<ThetaEstimate> {
    fit(EstimatorTag::TwoScope, data, spec)
}

fn from_ols(tag: EstimatorTag, fit: OlsFit, names: Vec<String>, model: &BoundModel, fs: Option<FirstStage>) -> ThetaEstimate {
    ThetaEstimate {
        tag,
        theta: fit.coefficients,
        names,
        k: model.k(),
        m: model.m(),
        vcov: Some(fit.vcov_classical),
        vcov_source: Some(VcovSource::Classical),
        first_stage: fs,
        r_squared: Some(fit.r_squared),
        sigma2_hat: Some(fit.sigma2_hat),
        sigma_u: None,
        loglik: None,
        converged: true,
    }
}

fn ols_bound(model: &BoundModel) -> Result<ThetaEstimate> {
    let w = model.x.augment(&model.z, &model.z_names)?;
    let fit = ols_fit(&w, &model.y)?;
    Ok(from_ols(EstimatorTag::Ols, fit, w.column_names().to_vec(), model, None))
}

/// Stacks (x, z, c) where `c` holds one correction column per endogenous regressor.
fn corrected_design(model: &BoundModel, correction: &DMatrix<f64>) -> Result<DesignMatrix> {
    let rho_names: Vec<String> = model.z_names.iter().map(|z| correction_name(z)).collect();
    model.x.augment(&model.z, &model.z_names)?.augment(correction, &rho_names)
}

/// Adds the identification hint to collinearity errors that involve the correction block.
fn identification_hint(err: Error, model: &BoundModel) -> Error {
    match err {
        Error::RankDeficient { column, .. }
            if model.z_names.contains(&column) || column.starts_with("rho:") =>
        {
            Error::RankDeficient {
                column,
                hint: "; the control function is (nearly) linear in the endogenous regressor, which happens when \
                       the first-stage error is Gaussian and the model is not identified"
                    .into(),
            }
        }
        other => other,
    }
}

fn npcf_bound(model: &BoundModel) -> Result<ThetaEstimate> {
    let fs = first_stage(&model.x, &model.z)?;
    let w = corrected_design(model, &fs.eta_hat)?;
    let fit = ols_fit(&w, &model.y).map_err(|e| identification_hint(e, model))?;
    Ok(from_ols(EstimatorTag::Npcf, fit, w.column_names().to_vec(), model, Some(fs)))
}

/// Just-identified IV of `y` on `regressors` with instruments `M_η regressors`,
/// where `M_η` removes the span of `eta`. Returns (coefficients, (Z'X)⁻¹).
pub fn internal_iv_solve(
    regressors: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let eta_names: Vec<String> = (0..eta.ncols()).map(|j| format!("eta{}", j + 1)).collect();
    let eta_design = DesignMatrix::new(eta.clone(), eta_names, false)?;
    let instruments = crate::regress::partial_out_columns(&eta_design, regressors)?;
    let zx = instruments.transpose() * regressors;
    let zy = instruments.transpose() * y;
    let names: Vec<String> = (0..regressors.ncols()).map(|j| format!("#{j}")).collect();
    // Z'X = X'M X is symmetric positive definite exactly when (X, η) has full rank.
    let qr = PivotedQr::factor(&zx, &names)?;
    let coef = qr.solve(&zy);
    let zx_inv = zx.clone().try_inverse().ok_or_else(|| Error::RankDeficient { column: "instrument".into(), hint: String::new() })?;
    Ok((coef, zx_inv))
}

fn iv_internal_bound(model: &BoundModel) -> Result<ThetaEstimate> {
    let fs = first_stage(&model.x, &model.z)?;
    // full-rank check and naming on the joint design
    let w = corrected_design(model, &fs.eta_hat)?;
    PivotedQr::factor(w.values(), w.column_names()).map_err(|e| identification_hint(e, model))?;

    let xz = model.x.augment(&model.z, &model.z_names)?;
    let (ab, zx_inv) = internal_iv_solve(xz.values(), &fs.eta_hat, &model.y)?;
    let partial = &model.y - xz.values() * &ab;
    let eta_names: Vec<String> = model.z_names.iter().map(|z| correction_name(z)).collect();
    let eta_design = DesignMatrix::new(fs.eta_hat.clone(), eta_names, false)?;
    let rho_fit = ols_fit(&eta_design, &partial)?;
    let p = ab.len();
    let m = model.m();
    let mut theta = DVector::zeros(p + m);
    theta.rows_mut(0, p).copy_from(&ab);
    theta.rows_mut(p, m).copy_from(&rho_fit.coefficients);

    let residuals = &model.y - w.values() * &theta;
    let n = model.n();
    let sigma2 = residuals.norm_squared() / (n - p - m) as f64;
    // classical IV covariance for (β, γ); instruments are symmetric so (Z'X)⁻¹ Z'Z (X'Z)⁻¹ = (Z'X)⁻¹ here
    let mut vcov = DMatrix::zeros(p + m, p + m);
    vcov.view_mut((0, 0), (p, p)).copy_from(&(&zx_inv * sigma2));
    let rho_block = &rho_fit.vcov_classical * (sigma2 / rho_fit.sigma2_hat.max(f64::MIN_POSITIVE));
    vcov.view_mut((p, p), (m, m)).copy_from(&rho_block);

    let tss = {
        let mean = model.y.mean();
        model.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    };
    Ok(ThetaEstimate {
        tag: EstimatorTag::IvInternal,
        theta,
        names: w.column_names().to_vec(),
        k: model.k(),
        m,
        vcov: Some(vcov),
        vcov_source: Some(VcovSource::Classical),
        first_stage: Some(fs),
        r_squared: Some(if tss > 0.0 { (1.0 - residuals.norm_squared() / tss).clamp(0.0, 1.0) } else { 1.0 }),
        sigma2_hat: Some(sigma2),
        sigma_u: None,
        loglik: None,
        converged: true,
    })
}

/// Scores-on-scores first step: normal scores of each endogenous column are
/// regressed on an intercept and the normal scores of the non-intercept
/// exogenous columns; the residuals become the correction regressors.
/// Columns with the same ranks as an earlier column (such as x and x² for
/// x >= 0) have identical scores and enter once, so `delta_hat` has one row
/// per distinct score column.
pub fn two_scope_correction(model: &BoundModel) -> Result<FirstStage> {
    let n = model.n();
    let names = model.x.column_names();
    let xv = model.x.values();
    let start = usize::from(model.x.has_intercept());
    let mut score_cols = Vec::with_capacity(model.k());
    for j in start..model.k() {
        let col: Vec<f64> = xv.column(j).iter().copied().collect();
        let s = normal_scores(&col).map_err(|e| match e {
            Error::ConstantInput(_) => Error::ConstantInput(format!("exogenous column `{}` is constant", names[j])),
            other => other,
        })?;
        if !score_cols.iter().any(|(_, prev): &(String, Vec<f64>)| *prev == s) {
            score_cols.push((format!("score:{}", names[j]), s));
        }
    }
    let sx = DesignMatrix::with_intercept(n, &score_cols)?;
    let qr = PivotedQr::factor(sx.values(), sx.column_names())?;
    let m = model.m();
    let mut delta_hat = DMatrix::zeros(sx.ncols(), m);
    let mut e_hat = DMatrix::zeros(n, m);
    let mut ranks = DMatrix::zeros(n, m);
    for j in 0..m {
        let zj: Vec<f64> = model.z.column(j).iter().copied().collect();
        let sz = DVector::from_vec(normal_scores(&zj)?);
        let d = qr.solve(&sz);
        let r = &sz - sx.values() * &d;
        delta_hat.column_mut(j).copy_from(&d);
        e_hat.column_mut(j).copy_from(&r);
        ranks.column_mut(j).copy_from_slice(&crate::transform::average_ranks(&zj)?);
    }
    Ok(FirstStage { delta_hat, eta_hat: e_hat.clone(), e_hat, ranks })
}

fn two_scope_bound(model: &BoundModel) -> Result<ThetaEstimate> {
    let fs = two_scope_correction(model)?;
    let w = corrected_design(model, &fs.eta_hat)?;
    let fit = ols_fit(&w, &model.y).map_err(|e| identification_hint(e, model))?;
    Ok(from_ols(EstimatorTag::TwoScope, fit, w.column_names().to_vec(), model, Some(fs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gamma_cdf, sample, std_normal_quantile, DistSpec, RngStream};

    fn toy(n: usize, seed: u64, rho: f64) -> (Dataset, ModelSpec) {
        let x = sample(RngStream::new(seed, 1), &DistSpec::gamma(1.0, 1.0).unwrap(), n).unwrap();
        let e = sample(RngStream::new(seed, 2), &DistSpec::gamma(1.0, 1.0).unwrap(), n).unwrap();
        let eps = sample(RngStream::new(seed, 3), &DistSpec::std_normal(), n).unwrap();
        let z: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 0.5 * a + b).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 - x[i] + z[i] + rho * (e[i] - 1.0) + eps[i]).collect();
        let d = Dataset::new(vec!["y".into(), "x".into(), "z".into()], vec![y, x, z], "toy").unwrap();
        (d, ModelSpec::new("y", &["x"], &["z"]).unwrap())
    }

    #[test]
    fn two_scope_merges_rank_equivalent_controls() {
        let (mut d, _) = toy(200, 9, 0.5);
        let x2: Vec<f64> = d.column("x").unwrap().iter().map(|v| v * v).collect();
        d.push_column("x2", x2).unwrap();
        let spec = ModelSpec::new("y", &["x", "x2"], &["z"]).unwrap();
        let with = fit(EstimatorTag::TwoScope, &d, &spec).unwrap();
        let (d1, s1) = toy(200, 9, 0.5);
        let fs1 = two_scope_correction(&s1.bind(&d1).unwrap()).unwrap();
        let fs2 = with.first_stage.as_ref().unwrap();
        assert_eq!(fs2.delta_hat.nrows(), 2);
        assert_eq!(fs1.eta_hat, fs2.eta_hat);
    }

    #[test]
    fn tag_round_trip() {
        for t in EstimatorTag::ALL {
            assert_eq!(t.cli_name().parse::<EstimatorTag>().unwrap(), t);
        }
        assert!("probit".parse::<EstimatorTag>().is_err());
    }

    #[test]
    fn layout_and_names() {
        let (d, s) = toy(300, 1, 0.5);
        let f = fit_npcf(&d, &s).unwrap();
        assert_eq!(f.names, vec!["(Intercept)", "x", "z", "rho:z"]);
        assert_eq!((f.k, f.m, f.len()), (2, 1, 4));
        assert_eq!(f.rho().len(), 1);
        let o = fit_ols(&d, &s).unwrap();
        assert_eq!(o.len(), 3);
        assert!(o.rho().is_empty());
        assert_eq!(o.rho_index(0), None);
    }

    #[test]
    fn npcf_matches_explicit_joint_ols() {
        let (d, s) = toy(200, 2, 0.7);
        let f = fit_npcf(&d, &s).unwrap();
        let bound = s.bind(&d).unwrap();
        let fs = f.first_stage.as_ref().unwrap();
        let w = DMatrix::from_fn(200, 4, |i, j| match j {
            0 => 1.0,
            1 => bound.x.values()[(i, 1)],
            2 => bound.z[(i, 0)],
            _ => fs.eta_hat[(i, 0)],
        });
        // normal-equations oracle
        let wtw = w.transpose() * &w;
        let b = wtw.try_inverse().unwrap() * w.transpose() * &bound.y;
        assert!((&b - &f.theta).amax() < 1e-9);
        let resid = &bound.y - &w * &f.theta;
        assert!((w.transpose() * resid).amax() < 1e-8 * bound.y.norm());
    }

    #[test]
    fn iv_equals_npcf() {
        for seed in 0..5 {
            let (d, s) = toy(150, seed, 0.9);
            let a = fit_npcf(&d, &s).unwrap();
            let b = fit_iv_internal(&d, &s).unwrap();
            for j in 0..a.len() {
                assert!((a.theta[j] - b.theta[j]).abs() < 1e-10, "coef {j}: {} vs {}", a.theta[j], b.theta[j]);
            }
        }
    }

    #[test]
    fn internal_iv_single_regressor_formula() {
        let n = 60;
        let z = DMatrix::from_fn(n, 1, |i, _| ((i * 37) % 23) as f64 + 0.1 * i as f64);
        let eta = DMatrix::from_fn(n, 1, |i, _| ((i * 11) % 17) as f64 - 8.0);
        let y = DVector::from_fn(n, |i, _| 0.3 * z[(i, 0)] + ((i * 5) % 7) as f64);
        let (g, _) = internal_iv_solve(&z, &eta, &y).unwrap();
        let ee = eta.column(0).dot(&eta.column(0));
        let v: DVector<f64> = z.column(0) - eta.column(0) * (eta.column(0).dot(&z.column(0)) / ee);
        let expect = v.dot(&y) / v.dot(&z.column(0));
        assert!((g[0] - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn rescaling_z_rescales_gamma_only() {
        let (d, s) = toy(250, 4, 0.5);
        let base = fit_npcf(&d, &s).unwrap();
        let a = 3.5;
        let z: Vec<f64> = d.column("z").unwrap().iter().map(|v| a * v).collect();
        let d2 = Dataset::new(
            vec!["y".into(), "x".into(), "z".into()],
            vec![d.column("y").unwrap().to_vec(), d.column("x").unwrap().to_vec(), z],
            "scaled",
        )
        .unwrap();
        let f = fit_npcf(&d2, &s).unwrap();
        assert!((f.gamma()[0] - base.gamma()[0] / a).abs() < 1e-10);
        assert!((f.rho()[0] - base.rho()[0]).abs() < 1e-10);
        assert!((f.beta()[1] - base.beta()[1]).abs() < 1e-10);
    }

    #[test]
    fn gaussian_first_stage_is_reported_as_identification_failure() {
        // z takes exactly n evenly spaced normal-quantile values, so the scores equal z up to scale
        let n = 40;
        let z: Vec<f64> = (1..=n).map(|i| std_normal_quantile(i as f64 / (n + 1) as f64).unwrap()).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 3) as f64).collect();
        let d = Dataset::new(vec!["y".into(), "z".into()], vec![y, z], "gauss").unwrap();
        let s = ModelSpec::new::<&str>("y", &[], &["z"]).unwrap();
        match fit_npcf(&d, &s) {
            Err(Error::RankDeficient { hint, .. }) => assert!(hint.contains("identified")),
            other => panic!("expected rank failure, got {other:?}"),
        }
    }

    #[test]
    fn two_scope_with_independent_x_tracks_npcf_scores() {
        let n = 5000;
        let x = sample(RngStream::new(5, 1), &DistSpec::gamma(1.0, 1.0).unwrap(), n).unwrap();
        let e = sample(RngStream::new(5, 2), &DistSpec::gamma(1.0, 1.0).unwrap(), n).unwrap();
        let y: Vec<f64> = (0..n).map(|i| x[i] + e[i]).collect();
        let d = Dataset::new(vec!["y".into(), "x".into(), "z".into()], vec![y, x, e], "indep").unwrap();
        let s = ModelSpec::new("y", &["x"], &["z"]).unwrap();
        let a = fit_npcf(&d, &s).unwrap();
        let b = fit_two_scope(&d, &s).unwrap();
        let u = a.first_stage.unwrap().eta_hat.column(0).into_owned();
        let v = b.first_stage.unwrap().eta_hat.column(0).into_owned();
        let corr = (u.dot(&v) - n as f64 * u.mean() * v.mean())
            / ((u.variance() * v.variance()).sqrt() * n as f64);
        assert!(corr > 0.99, "corr {corr}");
    }

    #[test]
    fn ols_without_endogeneity_is_consistent() {
        let (d, s) = toy(10_000, 6, 0.0);
        let o = fit_ols(&d, &s).unwrap();
        assert!((o.gamma()[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn two_endogenous_regressors() {
        let n = 10_000;
        let g = DistSpec::gamma(1.0, 1.0).unwrap();
        let x = sample(RngStream::new(8, 1), &g, n).unwrap();
        let e1 = sample(RngStream::new(8, 2), &g, n).unwrap();
        let e2 = sample(RngStream::new(8, 3), &DistSpec::gamma(3.0, 2.0).unwrap(), n).unwrap();
        let eps = sample(RngStream::new(8, 4), &DistSpec::std_normal(), n).unwrap();
        let z1: Vec<f64> = (0..n).map(|i| 0.5 * x[i] + e1[i]).collect();
        let z2: Vec<f64> = (0..n).map(|i| -0.3 * x[i] + e2[i]).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let f1 = std_normal_quantile(1.0 - (-e1[i]).exp()).unwrap();
                let f2 = std_normal_quantile(gamma_cdf(3.0, 2.0, e2[i]).unwrap()).unwrap();
                1.0 + x[i] + z1[i] - 0.5 * z2[i] + 0.6 * f1 - 0.4 * f2 + eps[i]
            })
            .collect();
        let d = Dataset::new(
            ["y", "x", "z1", "z2"].map(String::from).to_vec(),
            vec![y, x, z1, z2],
            "two",
        )
        .unwrap();
        let s = ModelSpec::new("y", &["x"], &["z1", "z2"]).unwrap();
        let f = fit_npcf(&d, &s).unwrap();
        assert!((f.gamma()[0] - 1.0).abs() < 0.1, "{:?}", f.gamma());
        assert!((f.gamma()[1] + 0.5).abs() < 0.1, "{:?}", f.gamma());
        let iv = fit_iv_internal(&d, &s).unwrap();
        assert!((&iv.theta - &f.theta).amax() < 1e-9);
    }
}
