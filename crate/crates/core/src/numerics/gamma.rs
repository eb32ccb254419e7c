//! Gamma distribution in the shape/rate parameterisation (mean = shape / rate).

use crate::error::{Error, Result};

use super::normal::quantile_unchecked;

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn check_params(shape: f64, rate: f64) -> Result<()> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Domain(format!(
            "gamma parameters must be positive and finite (shape={shape}, rate={rate})"
        )));
    }
    Ok(())
}

/// log of the common prefactor x^a e^{-x} / Γ(a).
fn ln_prefactor(a: f64, x: f64) -> f64 {
    a * x.ln() - x - ln_gamma(a)
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * ln_prefactor(a, x).exp()
}

fn upper_continued_fraction(a: f64, x: f64) -> f64 {
    // modified Lentz
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let i = i as f64;
        let an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    ln_prefactor(a, x).exp() * h
}

/// Regularised lower incomplete gamma function P(a, x).
pub fn reg_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else if x < a + 1.0 {
        lower_series(a, x)
    } else {
        1.0 - upper_continued_fraction(a, x)
    }
}

/// Regularised upper incomplete gamma function Q(a, x) = 1 - P(a, x).
pub fn reg_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_continued_fraction(a, x)
    }
}

pub fn gamma_pdf(shape: f64, rate: f64, x: f64) -> Result<f64> {
    check_params(shape, rate)?;
    Ok(pdf_unchecked(shape, rate, x))
}

pub(crate) fn pdf_unchecked(shape: f64, rate: f64, x: f64) -> f64 {
    if x < 0.0 || x.is_infinite() {
        return 0.0;
    }
    if x == 0.0 {
        return if shape < 1.0 {
            f64::INFINITY
        } else if shape == 1.0 {
            rate
        } else {
            0.0
        };
    }
    let y = rate * x;
    rate * ((shape - 1.0) * y.ln() - y - ln_gamma(shape)).exp()
}

pub fn gamma_cdf(shape: f64, rate: f64, x: f64) -> Result<f64> {
    check_params(shape, rate)?;
    if x.is_nan() {
        return Err(Error::Domain("gamma cdf evaluated at NaN".into()));
    }
    Ok(reg_gamma_p(shape, rate * x))
}

/// Upper tail probability, accurate when it is tiny.
pub fn gamma_sf(shape: f64, rate: f64, x: f64) -> Result<f64> {
    check_params(shape, rate)?;
    if x.is_nan() {
        return Err(Error::Domain("gamma sf evaluated at NaN".into()));
    }
    Ok(reg_gamma_q(shape, rate * x))
}

/// Inverse of [`gamma_cdf`] in `u`.
pub fn gamma_quantile(shape: f64, rate: f64, u: f64) -> Result<f64> {
    check_params(shape, rate)?;
    check_prob(u)?;
    Ok(standard_quantile(shape, u, false) / rate)
}

/// Point `x` with `gamma_sf(x) = q`; keeps precision for q near zero.
pub fn gamma_quantile_upper(shape: f64, rate: f64, q: f64) -> Result<f64> {
    check_params(shape, rate)?;
    check_prob(q)?;
    Ok(standard_quantile(shape, q, true) / rate)
}

fn check_prob(u: f64) -> Result<()> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {u}")));
    }
    Ok(())
}

/// Solves P(a, x) = p (or Q(a, x) = p when `upper`) for unit rate by
/// safeguarded Newton iteration inside a shrinking bracket.
pub(crate) fn standard_quantile(a: f64, p: f64, upper: bool) -> f64 {
    // Residual is increasing in x in both orientations.
    let residual = |x: f64| {
        if upper {
            p - reg_gamma_q(a, x)
        } else {
            reg_gamma_p(a, x) - p
        }
    };

    let z = if upper { -quantile_unchecked(p) } else { quantile_unchecked(p) };
    let lower_prob_small = if upper { p > 0.99 } else { p < 0.01 };
    let mut x = {
        let c = 1.0 / (9.0 * a);
        let wh = a * (1.0 - c + z * c.sqrt()).powi(3);
        if wh > 0.0 && !lower_prob_small {
            wh
        } else {
            let lp = if upper { (-p).ln_1p() } else { p.ln() };
            ((lp + ln_gamma(a + 1.0)) / a).exp()
        }
    };
    if !(x > 0.0) || !x.is_finite() {
        x = a.max(1.0);
    }

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..400 {
        let g = residual(x);
        if g == 0.0 {
            return x;
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = (ln_prefactor(a, x) - x.ln()).exp();
        let mut next = if dens > 0.0 && dens.is_finite() { x - g / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(lo) + 1.0 };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return next;
        }
        if hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * hi {
            return 0.5 * (lo + hi);
        }
        x = next;
    }
    x
}
