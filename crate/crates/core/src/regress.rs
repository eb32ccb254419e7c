//! Dense least squares on a column-pivoted QR factorisation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a column counts as collinear.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
    has_intercept: bool,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>, has_intercept: bool) -> Result<Self> {
        let (n, p) = values.shape();
        if column_names.len() != p {
            return Err(Error::InvalidArgument(format!("{} column names for {p} columns", column_names.len())));
        }
        if p == 0 {
            return Err(Error::InvalidArgument("design matrix has no columns".into()));
        }
        if n <= p {
            return Err(Error::InvalidArgument(format!("design needs more rows than columns (n={n}, p={p})")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design matrix contains non-finite entries".into()));
        }
        if has_intercept && values.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidArgument("intercept column must be all ones".into()));
        }
        Ok(Self { values, column_names, has_intercept })
    }

    /// Builds `[1, columns...]` with an `(Intercept)` first column.
    pub fn with_intercept(n: usize, columns: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut m = DMatrix::from_element(n, columns.len() + 1, 1.0);
        let mut names = vec!["(Intercept)".to_string()];
        for (j, (name, col)) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::InvalidArgument(format!("column `{name}` has {} rows, expected {n}", col.len())));
            }
            m.column_mut(j + 1).copy_from_slice(col);
            names.push(name.clone());
        }
        Self::new(m, names, true)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Appends columns on the right.
    pub fn augment(&self, extra: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        if extra.nrows() != self.nrows() || extra.ncols() != names.len() {
            return Err(Error::InvalidArgument("augment: dimension mismatch".into()));
        }
        let (n, p) = self.values.shape();
        let mut m = DMatrix::zeros(n, p + extra.ncols());
        m.columns_mut(0, p).copy_from(&self.values);
        m.columns_mut(p, extra.ncols()).copy_from(extra);
        let mut all = self.column_names.clone();
        all.extend(names.iter().cloned());
        Self::new(m, all, self.has_intercept)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub vcov_classical: DMatrix<f64>,
    pub vcov_hc0: DMatrix<f64>,
    pub r_squared: f64,
    pub sigma2_hat: f64,
}

impl OlsFit {
    pub fn se_classical(&self) -> Vec<f64> {
        self.vcov_classical.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Pivoted QR of a full-rank design, reusable across right-hand sides.
pub(crate) struct PivotedQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    /// `order[j]` is the original index of the j-th pivoted column.
    order: Vec<usize>,
}

impl PivotedQr {
    pub(crate) fn factor(x: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let p = x.ncols();
        let qr = x.clone().col_piv_qr();
        let mut idx = DMatrix::from_fn(1, p, |_, j| j as f64);
        qr.p().permute_columns(&mut idx);
        let order: Vec<usize> = idx.iter().map(|v| *v as usize).collect();
        let r = qr.r();
        let lead = r[(0, 0)].abs();
        for j in 0..p {
            if !(r[(j, j)].abs() > RANK_TOL * lead) {
                let column = names.get(order[j]).cloned().unwrap_or_else(|| format!("#{}", order[j]));
                return Err(Error::RankDeficient { column, hint: String::new() });
            }
        }
        Ok(Self { q: qr.q(), r, order })
    }

    pub(crate) fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.transpose() * y;
        let z = self.r.solve_upper_triangular(&qty).expect("nonsingular R after rank check");
        let mut b = DVector::zeros(z.len());
        for (j, &orig) in self.order.iter().enumerate() {
            b[orig] = z[j];
        }
        b
    }

    /// (X'X)⁻¹ in the original column order.
    pub(crate) fn xtx_inverse(&self) -> DMatrix<f64> {
        let p = self.r.ncols();
        let rinv = self.r.solve_upper_triangular(&DMatrix::identity(p, p)).expect("nonsingular R after rank check");
        let vp = &rinv * rinv.transpose();
        let mut v = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                v[(self.order[i], self.order[j])] = vp[(i, j)];
            }
        }
        v
    }
}

/// Ordinary least squares with classical and HC0 covariance matrices.
pub fn ols_fit(x: &DesignMatrix, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = x.values.shape();
    if y.len() != n {
        return Err(Error::InvalidArgument(format!("response has {} rows, design has {n}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("response contains non-finite values".into()));
    }
    let qr = PivotedQr::factor(&x.values, &x.column_names)?;
    let coefficients = qr.solve(y);
    let residuals = y - &x.values * &coefficients;
    let rss = residuals.norm_squared();
    let sigma2_hat = rss / (n - p) as f64;
    let xtx_inv = qr.xtx_inverse();
    let vcov_classical = &xtx_inv * sigma2_hat;

    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let row = x.values.row(i);
        let w = residuals[i] * residuals[i];
        meat += row.transpose() * row * w;
    }
    let vcov_hc0 = &xtx_inv * meat * &xtx_inv;

    let tss = if x.has_intercept {
        let mean = y.mean();
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.norm_squared()
    };
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };

    Ok(OlsFit { coefficients, residuals, vcov_classical, vcov_hc0, r_squared, sigma2_hat })
}

/// Residual maker: `b - A (A'A)⁻¹ A' b`.
pub fn partial_out(a: &DesignMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::InvalidArgument("partial_out: dimension mismatch".into()));
    }
    let qr = PivotedQr::factor(&a.values, &a.column_names)?;
    Ok(b - &a.values * qr.solve(b))
}

/// Applies the residual maker of `a` to every column of `b`.
pub fn partial_out_columns(a: &DesignMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != a.nrows() {
        return Err(Error::InvalidArgument("partial_out: dimension mismatch".into()));
    }
    let qr = PivotedQr::factor(&a.values, &a.column_names)?;
    let mut out = b.clone();
    for j in 0..b.ncols() {
        let col = b.column(j).into_owned();
        let fitted = &a.values * qr.solve(&col);
        out.column_mut(j).copy_from(&(col - fitted));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample, DistSpec, RngStream};
    use proptest::prelude::*;

    fn random_design(n: usize, p: usize, seed: u64) -> (DesignMatrix, DVector<f64>) {
        let cols: Vec<(String, Vec<f64>)> = (1..p)
            .map(|j| (format!("x{j}"), sample(RngStream::new(seed, j as u64), &DistSpec::std_normal(), n).unwrap()))
            .collect();
        let x = DesignMatrix::with_intercept(n, &cols).unwrap();
        let noise = sample(RngStream::new(seed, 99), &DistSpec::std_normal(), n).unwrap();
        let y = DVector::from_fn(n, |i, _| 1.0 + cols.iter().map(|(_, c)| 0.5 * c[i]).sum::<f64>() + noise[i]);
        (x, y)
    }

    #[test]
    fn intercept_only_constant_response() {
        let x = DesignMatrix::new(DMatrix::from_element(2, 1, 1.0), vec!["(Intercept)".into()], true).unwrap();
        let fit = ols_fit(&x, &DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-14);
        assert!(fit.residuals.amax() < 1e-14);
    }

    #[test]
    fn exact_linear_response() {
        let (x, _) = random_design(30, 3, 1);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = x.values() * &b;
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.residuals.amax() < 1e-10);
        assert!((fit.coefficients - b).amax() < 1e-10);
    }

    #[test]
    fn matches_normal_equations() {
        let (x, y) = random_design(50, 3, 2);
        let fit = ols_fit(&x, &y).unwrap();
        let xt = x.values().transpose();
        let oracle = (&xt * x.values()).try_inverse().unwrap() * (&xt * &y);
        assert!((&fit.coefficients - oracle).amax() < 1e-9);
        let rss = fit.residuals.norm_squared();
        let mean = y.mean();
        let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((fit.r_squared - (1.0 - rss / tss)).abs() < 1e-12);
    }

    #[test]
    fn hc0_matches_sandwich_oracle() {
        let (x, y) = random_design(40, 3, 3);
        let fit = ols_fit(&x, &y).unwrap();
        let xv = x.values();
        let bread = (xv.transpose() * xv).try_inverse().unwrap();
        let d = DMatrix::from_diagonal(&fit.residuals.map(|e| e * e));
        let oracle = &bread * xv.transpose() * d * xv * &bread;
        assert!((fit.vcov_hc0 - oracle).amax() < 1e-12);
        let classical = &bread * fit.sigma2_hat;
        assert!((fit.vcov_classical - classical).amax() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_column() {
        let n = 20;
        let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        let x = DesignMatrix::with_intercept(n, &[("a".into(), a), ("b".into(), b)]).unwrap();
        let err = ols_fit(&x, &DVector::from_element(n, 1.0)).unwrap_err();
        match err {
            Error::RankDeficient { column, .. } => assert!(["a", "b", "(Intercept)"].contains(&column.as_str())),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn partial_out_examples() {
        let (x, _) = random_design(25, 3, 4);
        let b = x.values() * DVector::from_vec(vec![0.3, 1.0, -1.0]);
        assert!(partial_out(&x, &b).unwrap().amax() < 1e-10);

        // column orthogonal to a single-column A stays put
        let a = DesignMatrix::new(DMatrix::from_fn(4, 1, |i, _| [1.0, 1.0, 0.0, 0.0][i]), vec!["a".into()], false).unwrap();
        let v = DVector::from_vec(vec![1.0, -1.0, 3.0, 2.0]);
        assert!((partial_out(&a, &v).unwrap() - &v).amax() < 1e-14);
    }

    #[test]
    fn frisch_waugh() {
        let (x, y) = random_design(60, 3, 5);
        let joint = ols_fit(&x, &y).unwrap();
        let names = x.column_names();
        let others = DesignMatrix::new(x.values().columns(0, 2).into_owned(), names[..2].to_vec(), true).unwrap();
        let z = x.values().column(2).into_owned();
        let zt = partial_out(&others, &z).unwrap();
        let yt = partial_out(&others, &y).unwrap();
        let slope = zt.dot(&yt) / zt.dot(&zt);
        assert!((slope - joint.coefficients[2]).abs() < 1e-10);
    }

    #[test]
    fn vcov_is_symmetric_psd() {
        let (x, y) = random_design(40, 4, 6);
        let fit = ols_fit(&x, &y).unwrap();
        for v in [&fit.vcov_classical, &fit.vcov_hc0] {
            assert!((v - v.transpose()).amax() < 1e-14);
            let eig = v.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-10 * v.amax());
        }
    }

    #[test]
    fn dimension_checks() {
        assert!(DesignMatrix::new(DMatrix::from_element(2, 2, 1.0), vec!["a".into(), "b".into()], false).is_err());
        assert!(DesignMatrix::new(DMatrix::from_element(3, 1, 2.0), vec!["a".into()], true).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn residuals_orthogonal_and_row_order_irrelevant(seed in 0u64..1000, n in 12usize..60, shift in 1usize..11) {
            let (x, y) = random_design(n, 4, seed);
            let fit = ols_fit(&x, &y).unwrap();
            let scale = y.norm() * x.values().norm();
            let ortho = x.values().transpose() * &fit.residuals;
            prop_assert!(ortho.amax() <= 1e-8 * scale.max(1.0));

            let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
            let mut distinct = perm.clone();
            distinct.sort_unstable();
            distinct.dedup();
            prop_assume!(distinct.len() == n);
            let xp = DMatrix::from_fn(n, 4, |i, j| x.values()[(perm[i], j)]);
            let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
            let fit_p = ols_fit(&DesignMatrix::new(xp, x.column_names().to_vec(), true).unwrap(), &yp).unwrap();
            prop_assert!((fit_p.coefficients - &fit.coefficients).amax() < 1e-12);
        }

        #[test]
        fn partial_out_is_idempotent(seed in 0u64..1000) {
            let (x, y) = random_design(30, 3, seed);
            let once = partial_out(&x, &y).unwrap();
            let twice = partial_out(&x, &once).unwrap();
            prop_assert!((twice - &once).amax() < 1e-10);
        }
    }
}
