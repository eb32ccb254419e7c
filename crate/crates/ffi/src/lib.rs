//! C interface to the endofix estimators.
//!
//! Datasets and fitted estimates are opaque heap handles created by
//! `ef_dataset_new` / `ef_fit` and released with the matching `_free`
//! function. Every fallible call returns an [`EfStatus`]; on failure the
//! message is available from `ef_last_error` on the same thread until the
//! next failing call. Panics are caught at the boundary and reported as
//! `EF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use endofix::asymptotics::{constants_c, lemma_b_residual, schur_margin};
use endofix::inference::{exogeneity_test, pairs_bootstrap};
use endofix::numerics::{DistSpec, QuadratureSpec, RngStream};
use endofix::transform::normal_scores;
use endofix::{Dataset, Error, EstimatorTag, ModelSpec, ThetaEstimate};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    /// Collinear design, constant input or a Gaussian first stage.
    Identification = 4,
    Numeric = 5,
    Io = 6,
    /// The requested quantity is not attached to the handle.
    NotAvailable = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfEstimator {
    Ols = 0,
    Npcf = 1,
    IvInternal = 2,
    TwoScope = 3,
    GpCopula = 4,
}

impl From<EfEstimator> for EstimatorTag {
    fn from(e: EfEstimator) -> Self {
        match e {
            EfEstimator::Ols => EstimatorTag::Ols,
            EfEstimator::Npcf => EstimatorTag::Npcf,
            EfEstimator::IvInternal => EstimatorTag::IvInternal,
            EfEstimator::TwoScope => EstimatorTag::TwoScope,
            EfEstimator::GpCopula => EstimatorTag::GpCopula,
        }
    }
}

/// Constants of the asymptotic covariance for one error distribution.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EfConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub variance: f64,
    pub bridge_residual: f64,
    pub singularity_margin: f64,
}

/// Opaque dataset handle.
pub struct EfDataset {
    inner: Dataset,
}

/// Opaque fitted-estimate handle.
pub struct EfEstimate {
    fit: ThetaEstimate,
    spec: ModelSpec,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> EfStatus {
    match e {
        Error::InvalidArgument(_) => EfStatus::InvalidArgument,
        Error::Data(_) | Error::Csv(_) | Error::Json(_) => EfStatus::Data,
        Error::Io(_) => EfStatus::Io,
        Error::RankDeficient { .. } | Error::ConstantInput(_) | Error::Identification { .. } => EfStatus::Identification,
        _ => EfStatus::Numeric,
    }
}

/// Runs `f` behind a panic guard, recording any error message.
fn guard<F: FnOnce() -> Result<(), (EfStatus, String)>>(f: F) -> EfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EfStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {m}"));
            EfStatus::Panic
        }
    }
}

type Fallible<T> = Result<T, (EfStatus, String)>;

fn lift<T>(r: endofix::Result<T>) -> Fallible<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (EfStatus, String) {
    (EfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Fallible<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (EfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn c_str_array(p: *const *const c_char, len: usize, what: &str) -> Fallible<Vec<String>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    (0..len).map(|i| c_str(*p.add(i), what).map(str::to_string)).collect()
}

unsafe fn model_spec(
    outcome: *const c_char,
    exog: *const *const c_char,
    n_exog: usize,
    endog: *const *const c_char,
    n_endog: usize,
) -> Fallible<ModelSpec> {
    let y = c_str(outcome, "outcome")?;
    let x = c_str_array(exog, n_exog, "exog")?;
    let z = c_str_array(endog, n_endog, "endog")?;
    lift(ModelSpec::new(y, &x, &z))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ef_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread (empty if none). The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ef_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a dataset from `ncols` named columns of `nrows` values each;
/// `columns[j]` points at the values of column `names[j]`. The data are copied.
///
/// # Safety
/// `names` and `columns` must point at `ncols` valid pointers, each column
/// at `nrows` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ef_dataset_new(
    names: *const *const c_char,
    columns: *const *const f64,
    ncols: usize,
    nrows: usize,
    out: *mut *mut EfDataset,
) -> EfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let names = c_str_array(names, ncols, "names")?;
        if ncols > 0 && columns.is_null() {
            return Err(null("columns"));
        }
        let mut cols = Vec::with_capacity(ncols);
        for j in 0..ncols {
            let c = *columns.add(j);
            if c.is_null() && nrows > 0 {
                return Err(null("column pointer"));
            }
            cols.push(if nrows == 0 { Vec::new() } else { std::slice::from_raw_parts(c, nrows).to_vec() });
        }
        let inner = lift(Dataset::new(names, cols, "ffi"))?;
        *out = Box::into_raw(Box::new(EfDataset { inner }));
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must come from `ef_dataset_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ef_dataset_free(ds: *mut EfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows of a dataset (0 for null).
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ef_dataset_nrows(ds: *const EfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// Fits `estimator` to `outcome ~ exog | endog`. The estimate carries the
/// estimator's default covariance (classical for the regression-based
/// estimators, none for the likelihood comparator).
///
/// # Safety
/// All pointers must be valid for the given lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ef_fit(
    ds: *const EfDataset,
    outcome: *const c_char,
    exog: *const *const c_char,
    n_exog: usize,
    endog: *const *const c_char,
    n_endog: usize,
    estimator: EfEstimator,
    out: *mut *mut EfEstimate,
) -> EfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let spec = model_spec(outcome, exog, n_exog, endog, n_endog)?;
        let fit = lift(endofix::estimators::fit(estimator.into(), &ds.inner, &spec))?;
        let names = fit.names.iter().map(|n| CString::new(n.replace('\0', " ")).unwrap_or_default()).collect();
        *out = Box::into_raw(Box::new(EfEstimate { fit, spec, names }));
        Ok(())
    })
}

/// Releases an estimate; null is ignored.
///
/// # Safety
/// `est` must come from `ef_fit` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ef_estimate_free(est: *mut EfEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of coefficients (0 for null). Order: intercept and exogenous
/// slopes, endogenous slopes, then one correction per endogenous regressor.
///
/// # Safety
/// `est` must be null or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn ef_estimate_len(est: *const EfEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.fit.len())
}

/// Name of coefficient `j`, owned by the estimate; null when out of range.
///
/// # Safety
/// `est` must be null or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn ef_estimate_name(est: *const EfEstimate, j: usize) -> *const c_char {
    est.as_ref().and_then(|e| e.names.get(j)).map_or(ptr::null(), |n| n.as_ptr())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Fallible<()> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err((EfStatus::InvalidArgument, format!("buffer holds {len} values, {} needed", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the coefficient vector into `buf` (at least `ef_estimate_len` doubles).
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ef_estimate_theta(est: *const EfEstimate, buf: *mut f64, len: usize) -> EfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        copy_out(e.fit.theta.as_slice(), buf, len)
    })
}

/// Copies the standard errors into `buf`; `EF_STATUS_NOT_AVAILABLE` when the
/// estimate carries no covariance.
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ef_estimate_se(est: *const EfEstimate, buf: *mut f64, len: usize) -> EfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        let se = e.fit.se().ok_or((EfStatus::NotAvailable, "no covariance attached to this estimate".to_string()))?;
        copy_out(&se, buf, len)
    })
}

/// Replaces the estimate's covariance with a pairs bootstrap of `b`
/// resamples drawn from `seed`, refitting on the rows of `ds`.
///
/// # Safety
/// `est` must be a live estimate fitted on `ds`.
#[no_mangle]
pub unsafe extern "C" fn ef_estimate_bootstrap(est: *mut EfEstimate, ds: *const EfDataset, b: usize, seed: u64) -> EfStatus {
    guard(|| {
        let e = est.as_mut().ok_or_else(|| null("estimate"))?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let boot = lift(pairs_bootstrap(&ds.inner, &e.spec, e.fit.tag, b, RngStream::new(seed, 0)))?;
        lift(boot.apply_to(&mut e.fit))
    })
}

/// t-test of a zero control-function coefficient (one endogenous regressor).
///
/// # Safety
/// Pointers must be valid; `statistic` and `p_value` writable.
#[no_mangle]
pub unsafe extern "C" fn ef_exogeneity_test(
    ds: *const EfDataset,
    outcome: *const c_char,
    exog: *const *const c_char,
    n_exog: usize,
    endog: *const c_char,
    statistic: *mut f64,
    p_value: *mut f64,
) -> EfStatus {
    guard(|| {
        if statistic.is_null() || p_value.is_null() {
            return Err(null("output"));
        }
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let spec = model_spec(outcome, exog, n_exog, &endog, 1)?;
        let t = lift(exogeneity_test(&ds.inner, &spec))?;
        *statistic = t.statistic;
        *p_value = t.p_value;
        Ok(())
    })
}

/// Normal scores Φ⁻¹(rank/(n+1)) of `n` values, ties sharing their average rank.
///
/// # Safety
/// `values` readable and `out` writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ef_normal_scores(values: *const f64, n: usize, out: *mut f64) -> EfStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let v = std::slice::from_raw_parts(values, n);
        let s = lift(normal_scores(v))?;
        copy_out(&s, out, n)
    })
}

/// Constants for the standard normal (`shape <= 0`) or the mean-zero
/// Γ(shape, rate) first-stage error.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ef_constants(shape: f64, rate: f64, out: *mut EfConstants) -> EfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let f = if shape <= 0.0 {
            DistSpec::std_normal()
        } else {
            lift(DistSpec::gamma(shape, rate))
                .map_err(|(_, m)| (EfStatus::InvalidArgument, m))?
                .centered()
        };
        let q = QuadratureSpec::default();
        let c = lift(constants_c(&f, q))?;
        let r = lift(lemma_b_residual(&f, q))?;
        *out = EfConstants {
            c1: c.c1,
            c2: c.c2,
            c3: c.c3,
            variance: c.sigma_e2,
            bridge_residual: r,
            singularity_margin: schur_margin(c.sigma_e2, c.c2),
        };
        Ok(())
    })
}
