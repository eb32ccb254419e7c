use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gamma::{pdf_unchecked, reg_gamma_p, reg_gamma_q, standard_quantile};
use super::normal::{quantile_unchecked, std_normal_cdf, std_normal_pdf, std_normal_sf};
use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistFamily {
    Normal { mean: f64, sd: f64 },
    /// Shape/rate parameterisation, mean `shape / rate`.
    Gamma { shape: f64, rate: f64 },
    /// Gaussian-kernel smoothed empirical distribution of a sample.
    Empirical { sample: Vec<f64> },
}

/// A univariate error distribution, optionally shifted to mean zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistSpec {
    pub family: DistFamily,
    pub centered: bool,
    #[serde(skip)]
    smooth: Option<Smoothing>,
}

#[derive(Debug, Clone, PartialEq)]
struct Smoothing {
    sorted: Vec<f64>,
    bandwidth: f64,
}

impl DistSpec {
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() || !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::Domain(format!("normal needs finite mean and sd > 0 (got {mean}, {sd})")));
        }
        Ok(Self { family: DistFamily::Normal { mean, sd }, centered: false, smooth: None })
    }

    pub fn std_normal() -> Self {
        Self { family: DistFamily::Normal { mean: 0.0, sd: 1.0 }, centered: false, smooth: None }
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(Error::Domain(format!("gamma needs shape, rate > 0 (got {shape}, {rate})")));
        }
        Ok(Self { family: DistFamily::Gamma { shape, rate }, centered: false, smooth: None })
    }

    pub fn empirical(sample: Vec<f64>) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::Domain("empirical distribution needs at least 2 points".into()));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("empirical sample contains non-finite values".into()));
        }
        let mut spec = Self { family: DistFamily::Empirical { sample }, centered: false, smooth: None };
        spec.rebuild()?;
        Ok(spec)
    }

    /// Same distribution shifted to mean zero.
    pub fn centered(mut self) -> Self {
        self.centered = true;
        self
    }

    /// Restores cached smoothing state after deserialisation.
    pub fn rebuild(&mut self) -> Result<()> {
        if let DistFamily::Empirical { sample } = &self.family {
            let mut sorted = sample.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len() as f64;
            let mean = sorted.iter().sum::<f64>() / n;
            let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if !(var > 0.0) {
                return Err(Error::ConstantInput("empirical sample is constant".into()));
            }
            let bandwidth = 1.06 * var.sqrt() * n.powf(-0.2);
            self.smooth = Some(Smoothing { sorted, bandwidth });
        }
        Ok(())
    }

    fn smoothing(&self) -> &Smoothing {
        self.smooth.as_ref().expect("empirical DistSpec used before rebuild()")
    }

    /// Mean of the uncentred family.
    fn raw_mean(&self) -> f64 {
        match &self.family {
            DistFamily::Normal { mean, .. } => *mean,
            DistFamily::Gamma { shape, rate } => shape / rate,
            DistFamily::Empirical { sample } => sample.iter().sum::<f64>() / sample.len() as f64,
        }
    }

    fn shift(&self) -> f64 {
        if self.centered {
            self.raw_mean()
        } else {
            0.0
        }
    }

    pub fn mean(&self) -> f64 {
        self.raw_mean() - self.shift()
    }

    pub fn variance(&self) -> f64 {
        match &self.family {
            DistFamily::Normal { sd, .. } => sd * sd,
            DistFamily::Gamma { shape, rate } => shape / (rate * rate),
            DistFamily::Empirical { sample } => {
                let n = sample.len() as f64;
                let m = self.raw_mean();
                let h = self.smoothing().bandwidth;
                sample.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n + h * h
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x + self.shift();
        match &self.family {
            DistFamily::Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            DistFamily::Gamma { shape, rate } => reg_gamma_p(*shape, rate * x),
            DistFamily::Empirical { .. } => {
                let s = self.smoothing();
                s.sorted.iter().map(|v| std_normal_cdf((x - v) / s.bandwidth)).sum::<f64>() / s.sorted.len() as f64
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let x = x + self.shift();
        match &self.family {
            DistFamily::Normal { mean, sd } => std_normal_pdf((x - mean) / sd) / sd,
            DistFamily::Gamma { shape, rate } => pdf_unchecked(*shape, *rate, x),
            DistFamily::Empirical { .. } => {
                let s = self.smoothing();
                s.sorted.iter().map(|v| std_normal_pdf((x - v) / s.bandwidth)).sum::<f64>()
                    / (s.sorted.len() as f64 * s.bandwidth)
            }
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile requires 0 < u < 1, got {u}")));
        }
        Ok(self.quantile_at_normal(quantile_unchecked(u)))
    }

    /// `F⁻¹(Φ(t))`, evaluated through whichever tail of `Φ(t)` is small so the
    /// composition stays accurate for |t| up to ~37.
    pub fn quantile_at_normal(&self, t: f64) -> f64 {
        let shift = self.shift();
        match &self.family {
            DistFamily::Normal { mean, sd } => mean + sd * t - shift,
            DistFamily::Gamma { shape, rate } => {
                let x = if t <= 0.0 {
                    standard_quantile(*shape, std_normal_cdf(t), false)
                } else {
                    standard_quantile(*shape, std_normal_sf(t), true)
                };
                x / rate - shift
            }
            DistFamily::Empirical { .. } => {
                let s = self.smoothing();
                let (p, upper) = if t <= 0.0 { (std_normal_cdf(t), false) } else { (std_normal_sf(t), true) };
                let target = |x: f64| {
                    let n = s.sorted.len() as f64;
                    if upper {
                        p - s.sorted.iter().map(|v| std_normal_sf((x - v) / s.bandwidth)).sum::<f64>() / n
                    } else {
                        s.sorted.iter().map(|v| std_normal_cdf((x - v) / s.bandwidth)).sum::<f64>() / n - p
                    }
                };
                let span = 40.0 * s.bandwidth;
                let mut lo = s.sorted[0] - span;
                let mut hi = s.sorted[s.sorted.len() - 1] + span;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if target(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                        break;
                    }
                }
                0.5 * (lo + hi) - shift
            }
        }
    }

    /// Upper tail `1 - F(x)` without cancellation for the parametric families.
    pub fn sf(&self, x: f64) -> f64 {
        let y = x + self.shift();
        match &self.family {
            DistFamily::Normal { mean, sd } => std_normal_sf((y - mean) / sd),
            DistFamily::Gamma { shape, rate } => reg_gamma_q(*shape, rate * y),
            DistFamily::Empirical { .. } => 1.0 - self.cdf(x),
        }
    }

    pub fn is_normal(&self) -> bool {
        matches!(self.family, DistFamily::Normal { .. })
    }

    pub fn label(&self) -> String {
        let base = match &self.family {
            DistFamily::Normal { mean, sd } => format!("normal({mean},{sd})"),
            DistFamily::Gamma { shape, rate } => format!("gamma({shape},{rate})"),
            DistFamily::Empirical { sample } => format!("empirical(n={})", sample.len()),
        };
        if self.centered {
            format!("centered {base}")
        } else {
            base
        }
    }
}

/// Draws `n` values of `dist` from `stream`.
pub fn sample(stream: RngStream, dist: &DistSpec, n: usize) -> Result<Vec<f64>> {
    let mut rng = stream.rng();
    let shift = dist.shift();
    let out = match &dist.family {
        DistFamily::Normal { mean, sd } => {
            let d = Normal::new(*mean, *sd).map_err(|e| Error::Domain(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng) - shift).collect()
        }
        DistFamily::Gamma { shape, rate } => {
            let d = Gamma::new(*shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng) - shift).collect()
        }
        DistFamily::Empirical { sample } => {
            (0..n).map(|_| sample[rng.random_range(0..sample.len())] - shift).collect()
        }
    };
    Ok(out)
}

/// Multivariate normal with a Cholesky-factored covariance.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::InvalidArgument("covariance must be square and match the mean".into()));
        }
        let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { mean, chol: chol.l() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `n × d` matrix of draws, one observation per row.
    pub fn sample(&self, stream: RngStream, n: usize) -> DMatrix<f64> {
        let mut rng = stream.rng();
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            for j in 0..d {
                z[j] = rng.sample(StandardNormal);
            }
            let x = &self.mean + &self.chol * &z;
            out.row_mut(i).copy_from(&x.transpose());
        }
        out
    }
}
