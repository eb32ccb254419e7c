//! Asymptotic covariance of the control-function estimator for a known
//! first-stage error distribution.
//!
//! All integrals over `u ∈ (0, 1)` are rewritten with `u = Φ(t)`, which
//! removes the `1/φ(Φ⁻¹(u))` singularities, and the `t` range is truncated to
//! `|t| ≤ 8.5` (normal tail mass below 1e-17).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use crate::numerics::{DistFamily, DistSpec, QuadratureSpec};
use crate::error::{Error, Result};
use crate::numerics::{integrate_1d, std_normal_cdf, std_normal_pdf, std_normal_sf};

/// Truncation point of the `t = Φ⁻¹(u)` axis.
pub const T_LIMIT: f64 = 8.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    pub abs_tol: f64,
    pub c1_error: f64,
    pub c2_error: f64,
    pub c3_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Variance of the first-stage error.
    pub sigma_e2: f64,
    pub quadrature: QuadratureReport,
}

const GL_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
const CUMULATIVE_PANELS: usize = 4096;

fn gauss_legendre_8<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        sum += w * (f(mid - half * x) + f(mid + half * x));
    }
    sum * half
}

/// Running integral `G(t) = ∫_{-L}^{t} g(s) ds` of a smooth integrand on a
/// fine composite 8-point Gauss–Legendre grid: panel totals are accumulated
/// once and the partial panel is integrated on demand.
struct Cumulative<G: Fn(f64) -> f64> {
    g: G,
    edges: Vec<f64>,
    width: f64,
}

impl<G: Fn(f64) -> f64> Cumulative<G> {
    fn new(g: G) -> Self {
        let width = 2.0 * T_LIMIT / CUMULATIVE_PANELS as f64;
        let mut edges = Vec::with_capacity(CUMULATIVE_PANELS + 1);
        let mut acc = 0.0;
        edges.push(0.0);
        for j in 0..CUMULATIVE_PANELS {
            let a = -T_LIMIT + j as f64 * width;
            acc += gauss_legendre_8(&g, a, a + width);
            edges.push(acc);
        }
        Self { g, edges, width }
    }

    fn total(&self) -> f64 {
        self.edges[CUMULATIVE_PANELS]
    }

    fn at(&self, t: f64) -> f64 {
        let t = t.clamp(-T_LIMIT, T_LIMIT);
        let j = (((t + T_LIMIT) / self.width).floor() as usize).min(CUMULATIVE_PANELS - 1);
        let a = -T_LIMIT + j as f64 * self.width;
        if t <= a {
            return self.edges[j];
        }
        self.edges[j] + gauss_legendre_8(&self.g, a, t)
    }
}

/// `∫_{-L}^{L} outer(t) ∫_{-L}^{t} inner(s) ds dt`, or with the inner range
/// `[t, L]` when `upper` is set. The outer integral is adaptive; the inner
/// one is read off a running Gauss–Legendre integral.
fn nested_triangle<O, I>(outer: O, inner: I, upper: bool, spec: QuadratureSpec) -> Result<(f64, f64)>
where
    O: Fn(f64) -> f64,
    I: Fn(f64) -> f64,
{
    let cum = Cumulative::new(inner);
    if !cum.total().is_finite() {
        return Err(Error::NonFiniteIntegrand { at: f64::NAN });
    }
    let total = cum.total();
    let r = integrate_1d(
        |t| {
            let w = outer(t);
            if w == 0.0 {
                return 0.0;
            }
            let below = cum.at(t);
            w * if upper { total - below } else { below }
        },
        -T_LIMIT,
        T_LIMIT,
        spec,
    )?;
    Ok((r.value, r.error))
}

/// c₁ = ∫ f_e(F_e⁻¹(Φ(t))) dt, c₂ = ∫ F_e⁻¹(Φ(t)) t φ(t) dt and
/// c₃ = ∬ Q(s) Q(t) (min(Φ(s), Φ(t)) − Φ(s)Φ(t)) ds dt with Q = F_e⁻¹∘Φ.
///
/// c₃ is evaluated on the triangle s < t, where the kernel factors as
/// Φ(s)(1 − Φ(t)), and doubled.
pub fn constants_c(f: &DistSpec, spec: QuadratureSpec) -> Result<AsymptoticConstants> {
    let q = |t: f64| f.quantile_at_normal(t);
    let c1 = integrate_1d(|t| f.pdf(q(t)), -T_LIMIT, T_LIMIT, spec)?;
    let c2 = integrate_1d(|t| q(t) * t * std_normal_pdf(t), -T_LIMIT, T_LIMIT, spec)?;
    let (half, err3) = nested_triangle(
        |t| q(t) * std_normal_sf(t),
        |s| q(s) * std_normal_cdf(s),
        false,
        QuadratureSpec { abs_tol: 0.5 * spec.abs_tol, ..spec },
    )?;
    Ok(AsymptoticConstants {
        c1: c1.value,
        c2: c2.value,
        c3: 2.0 * half,
        sigma_e2: f.variance(),
        quadrature: QuadratureReport { abs_tol: spec.abs_tol, c1_error: c1.error, c2_error: c2.error, c3_error: 2.0 * err3 },
    })
}

/// Both sides of the bridge-functional identity
/// ∬ Q(s)·t·(min(Φ(s),Φ(t)) − Φ(s)Φ(t)) ds dt = ½ ∫ Q(t)·t·φ(t) dt.
pub fn lemma_b_sides(f: &DistSpec, spec: QuadratureSpec) -> Result<(f64, f64)> {
    let q = |t: f64| f.quantile_at_normal(t);
    let part = QuadratureSpec { abs_tol: 0.25 * spec.abs_tol, ..spec };
    // s < t: Φ(s)(1 − Φ(t)); s > t: Φ(t)(1 − Φ(s))
    let (below, _) = nested_triangle(|t| t * std_normal_sf(t), |s| q(s) * std_normal_cdf(s), false, part)?;
    let (above, _) = nested_triangle(|t| t * std_normal_cdf(t), |s| q(s) * std_normal_sf(s), true, part)?;
    let rhs = integrate_1d(|t| q(t) * t * std_normal_pdf(t), -T_LIMIT, T_LIMIT, part)?;
    Ok((below + above, 0.5 * rhs.value))
}

/// |LHS − RHS| of the bridge-functional identity.
pub fn lemma_b_residual(f: &DistSpec, spec: QuadratureSpec) -> Result<f64> {
    let (lhs, rhs) = lemma_b_sides(f, spec)?;
    Ok((lhs - rhs).abs())
}

/// Smallest singular value of the (z, η) Schur complement of M,
/// `[[σ_e², c₂], [c₂, 1]]`. Zero exactly when the first-stage error is Gaussian.
pub fn schur_margin(sigma_e2: f64, c2: f64) -> f64 {
    let tr = sigma_e2 + 1.0;
    let disc = ((sigma_e2 - 1.0).powi(2) + 4.0 * c2 * c2).sqrt();
    (0.5 * (tr - disc)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    ClosedForm,
    Simulated { draws: usize },
}

/// Population moments entering M and Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    /// E[x x'] including the intercept.
    pub sigma_x: DMatrix<f64>,
    pub mu_x: DVector<f64>,
    pub sigma_e2: f64,
    pub e_xx_eps2: DMatrix<f64>,
    pub e_e2_eps2: f64,
    pub e_eta2_eps2: f64,
    pub e_e_eta_eps2: f64,
    pub source: MomentSource,
}

impl MomentSet {
    /// Moments when ε is independent of (x, e) with variance `sigma2`.
    pub fn homoskedastic(sigma_x: DMatrix<f64>, mu_x: DVector<f64>, c: &AsymptoticConstants, sigma2: f64) -> Result<Self> {
        if sigma_x.nrows() != sigma_x.ncols() || sigma_x.nrows() != mu_x.len() {
            return Err(Error::InvalidArgument("second-moment matrix and mean vector disagree in size".into()));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidArgument(format!("error variance must be positive, got {sigma2}")));
        }
        Ok(Self {
            e_xx_eps2: &sigma_x * sigma2,
            sigma_x,
            mu_x,
            sigma_e2: c.sigma_e2,
            e_e2_eps2: sigma2 * c.sigma_e2,
            e_eta2_eps2: sigma2,
            e_e_eta_eps2: sigma2 * c.c2,
            source: MomentSource::ClosedForm,
        })
    }

    /// Sample moments from simulated draws: `x` is n×k (intercept first), `e`
    /// the centred first-stage errors, `eta` their normal scores and `eps` the
    /// structural noise.
    pub fn from_draws(x: &DMatrix<f64>, e: &[f64], eta: &[f64], eps: &[f64]) -> Result<Self> {
        let n = x.nrows();
        if e.len() != n || eta.len() != n || eps.len() != n || n < 2 {
            return Err(Error::InvalidArgument("moment draws must have matching lengths".into()));
        }
        let nf = n as f64;
        let sigma_x = x.transpose() * x / nf;
        let mu_x = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / nf));
        let mut e_xx_eps2 = DMatrix::zeros(x.ncols(), x.ncols());
        let (mut a, mut b, mut c, mut s2) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let w = eps[i] * eps[i];
            let row = x.row(i);
            e_xx_eps2 += row.transpose() * row * w;
            a += e[i] * e[i] * w;
            b += eta[i] * eta[i] * w;
            c += e[i] * eta[i] * w;
            s2 += e[i] * e[i];
        }
        Ok(Self {
            sigma_x,
            mu_x,
            sigma_e2: s2 / nf,
            e_xx_eps2: e_xx_eps2 / nf,
            e_e2_eps2: a / nf,
            e_eta2_eps2: b / nf,
            e_e_eta_eps2: c / nf,
            source: MomentSource::Simulated { draws: n },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaAsymptotic {
    pub m: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub schur_margin: f64,
    pub constants: AsymptoticConstants,
}

/// Assembles M, Ω and Σ = M⁻¹ Ω M⁻¹ for θ = (β', γ, ρ)'.
pub fn sigma_asymptotic(f: &DistSpec, delta: &[f64], rho: f64, moments: &MomentSet) -> Result<SigmaAsymptotic> {
    let c = constants_c(f, QuadratureSpec::default())?;
    sigma_from_constants(&c, delta, rho, moments)
}

pub fn sigma_from_constants(c: &AsymptoticConstants, delta: &[f64], rho: f64, mo: &MomentSet) -> Result<SigmaAsymptotic> {
    let k = delta.len();
    if mo.sigma_x.nrows() != k || mo.e_xx_eps2.nrows() != k {
        return Err(Error::InvalidArgument(format!("delta has {k} entries, moments describe {} regressors", mo.sigma_x.nrows())));
    }
    let d = DVector::from_column_slice(delta);
    let sx = &mo.sigma_x;
    let sxd = sx * &d;
    let sigma_e2 = mo.sigma_e2;

    let mut m = DMatrix::zeros(k + 2, k + 2);
    m.view_mut((0, 0), (k, k)).copy_from(sx);
    m.view_mut((0, k), (k, 1)).copy_from(&sxd);
    m.view_mut((k, 0), (1, k)).copy_from(&sxd.transpose());
    m[(k, k)] = d.dot(&sxd) + sigma_e2;
    m[(k, k + 1)] = c.c2;
    m[(k + 1, k)] = c.c2;
    m[(k + 1, k + 1)] = 1.0;

    let r2 = rho * rho;
    let omega1 = &mo.e_xx_eps2 + sx * (r2 * c.c1 * c.c1 * sigma_e2);
    let o1d = &omega1 * &d;
    let w1 = mo.e_e2_eps2 + r2 * c.c3;
    let w2 = mo.e_eta2_eps2 + r2 / 2.0;
    let w12 = mo.e_e_eta_eps2 + r2 * c.c2 / 2.0;
    let mut omega = DMatrix::zeros(k + 2, k + 2);
    omega.view_mut((0, 0), (k, k)).copy_from(&omega1);
    omega.view_mut((0, k), (k, 1)).copy_from(&o1d);
    omega.view_mut((k, 0), (1, k)).copy_from(&o1d.transpose());
    omega[(k, k)] = d.dot(&o1d) + w1;
    omega[(k, k + 1)] = w12;
    omega[(k + 1, k)] = w12;
    omega[(k + 1, k + 1)] = w2;

    let margin = schur_margin(sigma_e2, c.c2);
    if margin <= 1e-10 * sigma_e2.max(1.0) {
        return Err(Error::Identification {
            message: "M is singular: the first-stage error is Gaussian, so its normal score is linear in it".into(),
            margin,
        });
    }
    let m_inv = m
        .clone()
        .cholesky()
        .ok_or(Error::Identification { message: "M is not positive definite".into(), margin })?
        .inverse();
    let mut sigma = &m_inv * &omega * &m_inv;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(SigmaAsymptotic { m, omega, sigma, schur_margin: margin, constants: *c })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    /// c₃ as Var(P(Z)) with P(t) = ∫₀ᵗ Q: the bridge covariance kernel is
    /// Cov(1{w < Φ(s)}, 1{w < Φ(t)}) for w uniform, which collapses the double
    /// integral to the variance of a primitive of Q under the normal law.
    fn c3_variance_form(f: &DistSpec) -> f64 {
        let s = QuadratureSpec { abs_tol: 1e-10, max_subdivisions: 200_000 };
        let p = |t: f64| integrate_1d(|r| f.quantile_at_normal(r), 0.0, t, s).unwrap().value;
        let m1 = integrate_1d(|t| p(t) * std_normal_pdf(t), -T_LIMIT, T_LIMIT, s).unwrap().value;
        let m2 = integrate_1d(|t| p(t).powi(2) * std_normal_pdf(t), -T_LIMIT, T_LIMIT, s).unwrap().value;
        m2 - m1 * m1
    }

    /// c₂ = ∫₀¹ F⁻¹(u) Φ⁻¹(u) du directly in u, with the endpoints split off
    /// and refined geometrically.
    fn c2_direct(f: &DistSpec) -> f64 {
        let s = QuadratureSpec { abs_tol: 1e-12, max_subdivisions: 400_000 };
        let g = |u: f64| f.quantile(u).unwrap() * crate::numerics::std_normal_quantile(u).unwrap();
        let mut total = integrate_1d(g, 1e-3, 1.0 - 1e-3, s).unwrap().value;
        let mut a = 1e-3;
        while a > 1e-16 {
            let b = a * 1e-1;
            total += integrate_1d(g, b, a, s).unwrap().value;
            total += integrate_1d(g, 1.0 - a, 1.0 - b.max(1e-16), s).unwrap().value;
            a = b;
        }
        total
    }

    #[test]
    fn gaussian_constants() {
        let c = constants_c(&DistSpec::std_normal(), spec()).unwrap();
        assert!((c.c1 - 1.0).abs() < 1e-8, "c1 {}", c.c1);
        assert!((c.c2 - 1.0).abs() < 1e-8, "c2 {}", c.c2);
        assert!((c.c3 - 0.5).abs() < 1e-6, "c3 {}", c.c3);
        assert!(schur_margin(c.sigma_e2, c.c2) < 1e-8);
    }

    #[test]
    fn c2_matches_direct_quadrature_for_exponential() {
        let f = DistSpec::gamma(1.0, 1.0).unwrap().centered();
        let c = constants_c(&f, spec()).unwrap();
        let direct = c2_direct(&f);
        assert!((c.c2 - direct).abs() < 1e-5, "{} vs {direct}", c.c2);
    }

    #[test]
    fn c3_matches_variance_form() {
        for f in [DistSpec::std_normal(), DistSpec::gamma(3.0, 2.0).unwrap().centered()] {
            let c = constants_c(&f, spec()).unwrap();
            let v = c3_variance_form(&f);
            assert!((c.c3 - v).abs() < 1e-6, "{} vs {v}", c.c3);
        }
    }

    #[test]
    fn moment_inequalities() {
        let gauss_ratio = constants_c(&DistSpec::std_normal(), spec()).unwrap().c3;
        for f in [
            DistSpec::gamma(3.0, 2.0).unwrap().centered(),
            DistSpec::gamma(1.0, 1.0).unwrap().centered(),
            DistSpec::gamma(2.5, 3.0).unwrap().centered(),
        ] {
            let c = constants_c(&f, spec()).unwrap();
            assert!(c.c3 >= 0.0);
            assert!(c.c2 * c.c2 <= c.sigma_e2 + 1e-9);
            assert!(c.c3 <= gauss_ratio * c.sigma_e2 + 1e-9);
        }
    }

    #[test]
    fn c1_scales_with_the_rate() {
        let a = constants_c(&DistSpec::gamma(3.0, 1.0).unwrap().centered(), spec()).unwrap();
        let b = constants_c(&DistSpec::gamma(3.0, 2.0).unwrap().centered(), spec()).unwrap();
        assert!((b.c1 - 2.0 * a.c1).abs() < 1e-8, "{} vs {}", b.c1, a.c1);
        // c₂ scales with the standard deviation instead
        assert!((a.c2 - 2.0 * b.c2).abs() < 1e-8);
    }

    #[test]
    fn lemma_b_holds() {
        for f in [
            DistSpec::std_normal(),
            DistSpec::gamma(1.0, 1.0).unwrap().centered(),
            DistSpec::gamma(3.0, 2.0).unwrap().centered(),
        ] {
            let (lhs, rhs) = lemma_b_sides(&f, spec()).unwrap();
            assert!((lhs - rhs).abs() < 1e-6, "{}: {lhs} vs {rhs}", f.label());
        }
        let (lhs, _) = lemma_b_sides(&DistSpec::std_normal(), spec()).unwrap();
        assert!((lhs - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gaussian_sigma_is_an_identification_error() {
        let c = constants_c(&DistSpec::std_normal(), spec()).unwrap();
        let mo = MomentSet::homoskedastic(DMatrix::identity(1, 1), DVector::from_element(1, 1.0), &c, 1.0).unwrap();
        match sigma_from_constants(&c, &[0.0], 0.5, &mo) {
            Err(Error::Identification { margin, .. }) => assert!(margin < 1e-8),
            other => panic!("expected identification error, got {other:?}"),
        }
    }

    #[test]
    fn rho_zero_collapses_to_ols_sandwich() {
        let f = DistSpec::gamma(3.0, 2.0).unwrap().centered();
        let c = constants_c(&f, spec()).unwrap();
        let sx = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        let s2 = 1.7;
        let mo = MomentSet::homoskedastic(sx.clone(), DVector::from_column_slice(&[1.0, 1.0]), &c, s2).unwrap();
        let out = sigma_from_constants(&c, &[0.3, 0.5], 0.0, &mo).unwrap();
        let want = out.m.clone().try_inverse().unwrap() * s2;
        assert!((&out.sigma - &want).amax() < 1e-10);
        let back = &out.m * &out.sigma * &out.m;
        assert!((&back - &out.omega).amax() < 1e-10);
        assert!((&out.sigma - out.sigma.transpose()).amax() == 0.0);
    }

    #[test]
    fn doubling_resolution_is_stable() {
        let f = DistSpec::gamma(3.0, 2.0).unwrap().centered();
        let coarse = constants_c(&f, QuadratureSpec { abs_tol: 1e-8, max_subdivisions: 200_000 }).unwrap();
        let fine = constants_c(&f, QuadratureSpec { abs_tol: 1e-10, max_subdivisions: 200_000 }).unwrap();
        assert!((coarse.c1 - fine.c1).abs() < 1e-7);
        assert!((coarse.c2 - fine.c2).abs() < 1e-7);
        assert!((coarse.c3 - fine.c3).abs() < 1e-7);
    }

    #[test]
    fn draws_moments_match_closed_form_shape() {
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let e = [1.0, -1.0, 2.0, -2.0];
        let eta = [0.5, -0.5, 1.0, -1.0];
        let eps = [1.0, 1.0, 1.0, 1.0];
        let m = MomentSet::from_draws(&x, &e, &eta, &eps).unwrap();
        assert_eq!(m.sigma_x, m.e_xx_eps2);
        assert_eq!(m.sigma_e2, 2.5);
        assert_eq!(m.e_e_eta_eps2, 1.25);
        assert_eq!(m.source, MomentSource::Simulated { draws: 4 });
    }
}
