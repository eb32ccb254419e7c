//! Adaptive Simpson quadrature in one and two dimensions.

use std::cell::RefCell;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, max_subdivisions: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || max_subdivisions < 1 {
            return Err(Error::InvalidArgument(format!(
                "quadrature needs abs_tol > 0 and max_subdivisions >= 1 (got {abs_tol}, {max_subdivisions})"
            )));
        }
        Ok(Self { abs_tol, max_subdivisions })
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { abs_tol: 1e-10, max_subdivisions: 200_000 }
    }
}

/// Value of an integral with its accumulated error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

const INITIAL_PANELS: usize = 16;
const MAX_DEPTH: u32 = 50;

struct Simpson<'a, F: Fn(f64) -> f64> {
    f: &'a F,
    budget: usize,
    used: usize,
    err: f64,
    bad: Option<f64>,
}

impl<F: Fn(f64) -> f64> Simpson<'_, F> {
    fn eval(&mut self, x: f64) -> f64 {
        let v = (self.f)(x);
        if !v.is_finite() && self.bad.is_none() {
            self.bad = Some(x);
        }
        v
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = self.eval(lm);
        let frm = self.eval(rm);
        let h = b - a;
        let left = h / 12.0 * (fa + 4.0 * flm + fm);
        let right = h / 12.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if self.bad.is_some() {
            return 0.0;
        }
        if diff.abs() <= 15.0 * tol || depth >= MAX_DEPTH || self.used >= self.budget {
            self.err += diff.abs() / 15.0;
            return left + right + diff / 15.0;
        }
        self.used += 1;
        self.recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
            + self.recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
    }
}

fn simpson_finite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, spec: QuadratureSpec) -> Result<Integral> {
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, subdivisions: 0 });
    }
    let mut state = Simpson { f, budget: spec.max_subdivisions, used: INITIAL_PANELS, err: 0.0, bad: None };
    let width = (b - a) / INITIAL_PANELS as f64;
    let tol = spec.abs_tol / INITIAL_PANELS as f64;
    let mut total = 0.0;
    let mut fa = state.eval(a);
    for i in 0..INITIAL_PANELS {
        let lo = a + width * i as f64;
        let hi = if i + 1 == INITIAL_PANELS { b } else { lo + width };
        let fm = state.eval(0.5 * (lo + hi));
        let fb = state.eval(hi);
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += state.recurse(lo, hi, fa, fm, fb, whole, tol, 0);
        fa = fb;
    }
    if let Some(at) = state.bad {
        return Err(Error::NonFiniteIntegrand { at });
    }
    if state.used >= state.budget && state.err > spec.abs_tol {
        return Err(Error::Quadrature { subdivisions: state.used, error: state.err });
    }
    Ok(Integral { value: total, error: state.err, subdivisions: state.used })
}

/// Integrates `f` over `[lower, upper]`. Infinite limits are mapped onto a
/// bounded interval (x = t / (1 - t²) for the whole line, x = a ± t / (1 - t)
/// for half lines); the mapped integrand is taken as zero at the endpoints.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, lower: f64, upper: f64, spec: QuadratureSpec) -> Result<Integral> {
    if lower.is_nan() || upper.is_nan() {
        return Err(Error::InvalidArgument("NaN integration limit".into()));
    }
    if lower > upper {
        let r = integrate_1d(f, upper, lower, spec)?;
        return Ok(Integral { value: -r.value, ..r });
    }
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => simpson_finite(&f, lower, upper, spec),
        (false, false) => {
            let g = |t: f64| {
                if t.abs() >= 1.0 {
                    return 0.0;
                }
                let d = 1.0 - t * t;
                f(t / d) * (1.0 + t * t) / (d * d)
            };
            simpson_finite(&g, -1.0, 1.0, spec)
        }
        (true, false) => {
            let g = |t: f64| {
                if t >= 1.0 {
                    return 0.0;
                }
                let d = 1.0 - t;
                f(lower + t / d) / (d * d)
            };
            simpson_finite(&g, 0.0, 1.0, spec)
        }
        (false, true) => {
            let g = |t: f64| {
                if t >= 1.0 {
                    return 0.0;
                }
                let d = 1.0 - t;
                f(upper - t / d) / (d * d)
            };
            simpson_finite(&g, 0.0, 1.0, spec)
        }
    }
}

/// Integrates `f(x, y)` over the rectangle `[x0, x1] × [y0, y1]` by nesting
/// the adaptive rule: the outer rule integrates inner adaptive integrals.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(f: F, x: (f64, f64), y: (f64, f64), spec: QuadratureSpec) -> Result<Integral> {
    if !(x.0.is_finite() && x.1.is_finite() && y.0.is_finite() && y.1.is_finite()) {
        return Err(Error::InvalidArgument("integrate_2d requires a bounded rectangle".into()));
    }
    let width = (x.1 - x.0).abs().max(f64::MIN_POSITIVE);
    let inner_spec = QuadratureSpec { abs_tol: 0.25 * spec.abs_tol / width, ..spec };
    let outer_spec = QuadratureSpec { abs_tol: 0.5 * spec.abs_tol, ..spec };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let inner_err = RefCell::new(0.0_f64);
    let outer = integrate_1d(
        |xv| match integrate_1d(|yv| f(xv, yv), y.0, y.1, inner_spec) {
            Ok(r) => {
                let mut e = inner_err.borrow_mut();
                *e = e.max(r.error);
                r.value
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        x.0,
        x.1,
        outer_spec,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(Integral { value: outer.value, error: outer.error + width * inner_err.into_inner(), subdivisions: outer.subdivisions })
}
