//! Gaussian-copula maximum-likelihood comparator with a kernel-smoothed CDF
//! of the endogenous regressor.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BoundModel, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::estimators::{correction_name, fit_bound, EstimatorTag, ThetaEstimate};
use crate::numerics::{nelder_mead, std_normal_cdf, std_normal_quantile, SimplexOptions};
use crate::transform::first_stage;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Smoothed empirical CDF: the average of Gaussian kernels centred at the support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCdf {
    pub support_points: Vec<f64>,
    pub bandwidth: f64,
}

impl KernelCdf {
    /// Silverman's rule `1.06 · sd · n^(-1/5)`.
    pub fn silverman(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidArgument("kernel CDF needs at least 2 support points".into()));
        }
        let mean = points.iter().sum::<f64>() / n as f64;
        let sd = (points.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ConstantInput("kernel CDF support points are constant".into()));
        }
        Self::with_bandwidth(points, 1.06 * sd * (n as f64).powf(-0.2))
    }

    pub fn with_bandwidth(points: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if points.is_empty() || points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel CDF support must be non-empty and finite".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { support_points: points, bandwidth })
    }

    pub fn eval_unclipped(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        self.support_points.iter().map(|p| std_normal_cdf((t - p) / h)).sum::<f64>() / self.support_points.len() as f64
    }

    /// Kernel CDF clipped to `[1/(2n), 1 - 1/(2n)]`.
    pub fn eval(&self, t: f64) -> f64 {
        let lo = 0.5 / self.support_points.len() as f64;
        self.eval_unclipped(t).clamp(lo, 1.0 - lo)
    }
}

pub fn kernel_cdf_eval(f: &KernelCdf, t: f64) -> f64 {
    f.eval(t)
}

/// Likelihood parameters: `alpha = (β', γ)'`, copula correlation and error scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub sigma_u: f64,
}

impl GpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Domain(format!("copula correlation must lie in (-1, 1), got {}", self.rho)));
        }
        if !(self.sigma_u > 0.0) {
            return Err(Error::Domain(format!("error scale must be positive, got {}", self.sigma_u)));
        }
        Ok(())
    }
}

/// Precomputed pieces of the likelihood for one dataset.
struct Likelihood<'a> {
    model: &'a BoundModel,
    /// Φ⁻¹ of the clipped kernel CDF at each observation.
    scores: Vec<f64>,
}

impl<'a> Likelihood<'a> {
    fn new(model: &'a BoundModel, cdf: &KernelCdf) -> Result<Self> {
        let z = model.z.column(0);
        let scores = z.iter().map(|&v| std_normal_quantile(cdf.eval(v))).collect::<Result<Vec<_>>>()?;
        Ok(Self { model, scores })
    }

    fn value(&self, alpha: &[f64], rho: f64, sigma_u: f64) -> f64 {
        let x = self.model.x.values();
        let k = x.ncols();
        let n = self.model.n();
        let r2 = rho * rho;
        let one_m = 1.0 - r2;
        let ln_sigma = sigma_u.ln();
        let mut quad = 0.0;
        let mut dens = 0.0;
        for i in 0..n {
            let mut fitted = alpha[k] * self.model.z[(i, 0)];
            for j in 0..k {
                fitted += alpha[j] * x[(i, j)];
            }
            let u = (self.model.y[i] - fitted) / sigma_u;
            let a = self.scores[i];
            dens += -0.5 * u * u - LN_SQRT_2PI - ln_sigma;
            quad += r2 * (a * a + u * u) - 2.0 * rho * a * u;
        }
        -0.5 * n as f64 * one_m.ln() + dens - quad / (2.0 * one_m)
    }
}

/// Approximate log-likelihood of the Gaussian copula model. Residuals are
/// standardised by `sigma_u`; the copula term uses Φ⁻¹ of the kernel CDF of `z`.
pub fn gp_loglik(p: &GpParams, model: &BoundModel, cdf: &KernelCdf) -> Result<f64> {
    p.validate()?;
    if model.m() != 1 {
        return Err(Error::InvalidArgument("the copula likelihood handles exactly one endogenous regressor".into()));
    }
    if p.alpha.len() != model.k() + 1 {
        return Err(Error::InvalidArgument(format!("alpha has {} entries, expected {}", p.alpha.len(), model.k() + 1)));
    }
    Ok(Likelihood::new(model, cdf)?.value(&p.alpha, p.rho, p.sigma_u))
}

pub fn gp_fit(data: &Dataset, spec: &ModelSpec) -> Result<ThetaEstimate> {
    gp_fit_bound(&spec.bind(data)?)
}

fn unpack(v: &[f64], k: usize) -> (&[f64], f64, f64) {
    (&v[..=k], v[k + 1].tanh(), v[k + 2].exp())
}

/// Maximises the likelihood with the Silverman-bandwidth kernel CDF of `z`.
pub fn gp_fit_bound(model: &BoundModel) -> Result<ThetaEstimate> {
    if model.m() != 1 {
        return Err(Error::InvalidArgument("the copula likelihood handles exactly one endogenous regressor".into()));
    }
    let cdf = KernelCdf::silverman(model.z.column(0).iter().copied().collect())?;
    gp_fit_with_cdf(model, &cdf)
}

/// Maximises the likelihood from deterministic starts (OLS, the control-function
/// fit, and OLS with ρ = ±0.5) and keeps the best optimum.
pub fn gp_fit_with_cdf(model: &BoundModel, cdf: &KernelCdf) -> Result<ThetaEstimate> {
    if model.m() != 1 {
        return Err(Error::InvalidArgument("the copula likelihood handles exactly one endogenous regressor".into()));
    }
    if cdf.support_points.len() != model.n() {
        return Err(Error::InvalidArgument("kernel CDF must be built on the sample's endogenous column".into()));
    }
    let k = model.k();
    let lik = Likelihood::new(model, cdf)?;

    let ols = fit_bound(EstimatorTag::Ols, model)?;
    let ols_sigma = ols.sigma2_hat.unwrap_or(1.0).sqrt();
    let ols_se = ols.se().unwrap_or_else(|| vec![0.1; k + 1]);
    let pack = |alpha: &[f64], rho: f64, sigma: f64| {
        let mut v = alpha.to_vec();
        v.push(rho.clamp(-0.95, 0.95).atanh());
        v.push(sigma.max(1e-8).ln());
        v
    };
    let mut starts = vec![pack(ols.theta.as_slice(), 0.0, ols_sigma)];
    if let Ok(cf) = fit_bound(EstimatorTag::Npcf, model) {
        let r = cf.rho()[0];
        let s2 = cf.sigma2_hat.unwrap_or(1.0);
        let total = (r * r + s2).sqrt();
        starts.push(pack(&cf.theta.as_slice()[..=k], r / total, total));
    }
    starts.push(pack(ols.theta.as_slice(), 0.5, ols_sigma));
    starts.push(pack(ols.theta.as_slice(), -0.5, ols_sigma));

    let mut steps: Vec<f64> = (0..=k).map(|j| (2.0 * ols_se[j]).max(1e-3 * (1.0 + ols.theta[j].abs()))).collect();
    steps.push(0.3);
    steps.push(0.2);

    let n = model.n() as f64;
    let objective = |v: &[f64]| {
        let (alpha, rho, sigma) = unpack(v, k);
        -lik.value(alpha, rho, sigma) / n
    };
    let opts = SimplexOptions { max_evals: 8_000, f_tol: 1e-11, x_tol: 1e-7 };
    let results: Vec<_> = starts
        .par_iter()
        .map(|s| {
            let first = nelder_mead(objective, s, &steps, opts);
            // one restart from the optimum guards against a collapsed simplex
            let second = nelder_mead(objective, &first.x, &steps, opts);
            if second.f <= first.f {
                second
            } else {
                first
            }
        })
        .collect();
    let best = results
        .into_iter()
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .expect("at least one start");
    if !best.f.is_finite() {
        return Err(Error::Domain("copula likelihood is not finite at any start".into()));
    }

    let (alpha, rho, sigma_u) = unpack(&best.x, k);
    let mut theta = DVector::zeros(k + 2);
    theta.rows_mut(0, k + 1).copy_from_slice(alpha);
    theta[k + 1] = rho;
    let mut names = model.x.column_names().to_vec();
    names.push(model.z_names[0].clone());
    names.push(correction_name(&model.z_names[0]));
    Ok(ThetaEstimate {
        tag: EstimatorTag::GpCopula,
        theta,
        names,
        k,
        m: 1,
        vcov: None,
        vcov_source: None,
        first_stage: first_stage(&model.x, &model.z).ok(),
        r_squared: None,
        sigma2_hat: None,
        sigma_u: Some(sigma_u),
        loglik: Some(-best.f * n),
        converged: best.converged,
    })
}
