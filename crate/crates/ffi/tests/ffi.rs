use std::ffi::{c_char, CStr, CString};
use std::ptr;

use endofix::numerics::RngStream;
use endofix::simulation::{gen_dgp1, DgpConfig, EDist};
use endofix_ffi::*;

struct Owned {
    ds: *mut EfDataset,
    _names: Vec<CString>,
}

impl Drop for Owned {
    fn drop(&mut self) {
        unsafe { ef_dataset_free(self.ds) }
    }
}

fn dataset(n: usize, rho: f64) -> (Owned, Vec<Vec<f64>>) {
    let d = gen_dgp1(&DgpConfig::dgp1(n, EDist::G11.spec(), 1.0, rho), RngStream::new(21, 0)).unwrap();
    let cols: Vec<Vec<f64>> = ["y", "x", "z"].iter().map(|c| d.column(c).unwrap().to_vec()).collect();
    let names: Vec<CString> = ["y", "x", "z"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let name_ptrs: Vec<*const c_char> = names.iter().map(|s| s.as_ptr()).collect();
    let col_ptrs: Vec<*const f64> = cols.iter().map(|c| c.as_ptr()).collect();
    let mut ds = ptr::null_mut();
    let st = unsafe { ef_dataset_new(name_ptrs.as_ptr(), col_ptrs.as_ptr(), 3, n, &mut ds) };
    assert_eq!(st, EfStatus::Ok);
    (Owned { ds, _names: names }, cols)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ef_last_error()) }.to_string_lossy().into_owned()
}

struct Spec {
    y: CString,
    x: CString,
    z: CString,
}

impl Spec {
    fn new(x: &str) -> Self {
        Spec { y: CString::new("y").unwrap(), x: CString::new(x).unwrap(), z: CString::new("z").unwrap() }
    }

    fn fit(&self, ds: *const EfDataset, e: EfEstimator) -> (EfStatus, *mut EfEstimate) {
        let x = [self.x.as_ptr()];
        let z = [self.z.as_ptr()];
        let mut out = ptr::null_mut();
        let st = unsafe { ef_fit(ds, self.y.as_ptr(), x.as_ptr(), 1, z.as_ptr(), 1, e, &mut out) };
        (st, out)
    }
}

fn theta(est: *const EfEstimate) -> Vec<f64> {
    let n = unsafe { ef_estimate_len(est) };
    let mut buf = vec![0.0; n];
    assert_eq!(unsafe { ef_estimate_theta(est, buf.as_mut_ptr(), n) }, EfStatus::Ok);
    buf
}

#[test]
fn fit_matches_the_library() {
    let (ds, cols) = dataset(300, 0.5);
    assert_eq!(unsafe { ef_dataset_nrows(ds.ds) }, 300);
    let spec = Spec::new("x");
    let (st, est) = spec.fit(ds.ds, EfEstimator::Npcf);
    assert_eq!(st, EfStatus::Ok);
    let names: Vec<String> = (0..4).map(|j| unsafe { CStr::from_ptr(ef_estimate_name(est, j)) }.to_str().unwrap().to_string()).collect();
    assert_eq!(names, ["(Intercept)", "x", "z", "rho:z"]);
    assert!(unsafe { ef_estimate_name(est, 4) }.is_null());

    let d = endofix::Dataset::new(vec!["y".into(), "x".into(), "z".into()], cols, "t").unwrap();
    let direct = endofix::estimators::fit(endofix::EstimatorTag::Npcf, &d, &endofix::ModelSpec::new("y", &["x"], &["z"]).unwrap()).unwrap();
    assert_eq!(theta(est), direct.theta.as_slice());

    let (_, iv) = spec.fit(ds.ds, EfEstimator::IvInternal);
    let (a, b) = (theta(est), theta(iv));
    for j in 0..3 {
        assert!((a[j] - b[j]).abs() < 1e-10);
    }

    let mut se = vec![0.0; 4];
    assert_eq!(unsafe { ef_estimate_se(est, se.as_mut_ptr(), 4) }, EfStatus::Ok);
    assert_eq!(unsafe { ef_estimate_bootstrap(est, ds.ds, 19, 3) }, EfStatus::Ok);
    let mut se2 = vec![0.0; 4];
    assert_eq!(unsafe { ef_estimate_se(est, se2.as_mut_ptr(), 4) }, EfStatus::Ok);
    assert!(se2.iter().all(|v| *v > 0.0) && se != se2);
    assert_eq!(unsafe { ef_estimate_se(est, se2.as_mut_ptr(), 2) }, EfStatus::InvalidArgument);
    unsafe {
        ef_estimate_free(est);
        ef_estimate_free(iv);
    }
}

#[test]
fn likelihood_fit_has_no_covariance() {
    let (ds, _) = dataset(150, 0.5);
    let (st, est) = Spec::new("x").fit(ds.ds, EfEstimator::GpCopula);
    assert_eq!(st, EfStatus::Ok);
    let mut buf = [0.0; 4];
    assert_eq!(unsafe { ef_estimate_se(est, buf.as_mut_ptr(), 4) }, EfStatus::NotAvailable);
    assert!(!last_error().is_empty());
    unsafe { ef_estimate_free(est) };
}

#[test]
fn errors_are_reported_with_messages() {
    let (ds, _) = dataset(100, 0.5);
    let (st, est) = Spec::new("missing").fit(ds.ds, EfEstimator::Npcf);
    assert_eq!(st, EfStatus::Data);
    assert!(est.is_null());
    assert!(last_error().contains("missing"));
    let (st, _) = Spec::new("x").fit(ptr::null(), EfEstimator::Npcf);
    assert_eq!(st, EfStatus::NullPointer);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ef_dataset_new(ptr::null(), ptr::null(), 1, 3, &mut out) }, EfStatus::NullPointer);
    // null handles are accepted by the release functions
    unsafe {
        ef_dataset_free(ptr::null_mut());
        ef_estimate_free(ptr::null_mut());
    }
    assert_eq!(unsafe { ef_estimate_len(ptr::null()) }, 0);
}

#[test]
fn exogeneity_and_scores() {
    let (ds, _) = dataset(400, 0.9);
    let (y, x, z) = (CString::new("y").unwrap(), CString::new("x").unwrap(), CString::new("z").unwrap());
    let xs = [x.as_ptr()];
    let (mut t, mut p) = (0.0, 0.0);
    let st = unsafe { ef_exogeneity_test(ds.ds, y.as_ptr(), xs.as_ptr(), 1, z.as_ptr(), &mut t, &mut p) };
    assert_eq!(st, EfStatus::Ok);
    assert!(t > 2.0 && p < 0.05);

    let v = [3.0, 1.0, 2.0, 2.0, 5.0];
    let mut s = [0.0; 5];
    assert_eq!(unsafe { ef_normal_scores(v.as_ptr(), 5, s.as_mut_ptr()) }, EfStatus::Ok);
    assert_eq!(s.to_vec(), endofix::transform::normal_scores(&v).unwrap());
    assert_eq!(s[2], s[3]);
    assert_eq!(unsafe { ef_normal_scores(v.as_ptr(), 0, s.as_mut_ptr()) }, EfStatus::InvalidArgument);
}

#[test]
fn constants_and_version() {
    let mut c = EfConstants::default();
    assert_eq!(unsafe { ef_constants(0.0, 0.0, &mut c) }, EfStatus::Ok);
    assert!((c.c1 - 1.0).abs() < 1e-8 && (c.c2 - 1.0).abs() < 1e-8 && c.singularity_margin < 1e-8);
    assert_eq!(unsafe { ef_constants(3.0, 2.0, &mut c) }, EfStatus::Ok);
    assert!(c.bridge_residual < 1e-6 && c.singularity_margin > 0.01);
    assert_eq!(unsafe { ef_constants(3.0, -1.0, &mut c) }, EfStatus::InvalidArgument);
    let v = unsafe { CStr::from_ptr(ef_version()) }.to_str().unwrap();
    assert_eq!(v, endofix::VERSION);
}

#[test]
fn header_declares_the_interface_and_compiles() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/endofix.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["ef_dataset_new", "ef_fit", "ef_estimate_theta", "ef_estimate_bootstrap", "ef_last_error", "typedef struct EfDataset EfDataset"] {
        assert!(text.contains(f), "{f}");
    }
    // syntax-check the header with the system C compiler when one is present
    let probe = dir.join("tests/header_check.c");
    if let Ok(o) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-I"]).arg(dir.join("include")).arg(&probe).output() {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}
