//! First-stage residualisation and the rank-based normal-scores regressor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::std_normal_quantile;
use crate::regress::{DesignMatrix, PivotedQr};

/// Per-column first-stage output for the endogenous block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    /// k×m first-stage coefficients.
    pub delta_hat: DMatrix<f64>,
    /// n×m residuals.
    pub e_hat: DMatrix<f64>,
    /// n×m normal scores of the residuals.
    pub eta_hat: DMatrix<f64>,
    /// n×m average ranks (integers when there are no ties).
    pub ranks: DMatrix<f64>,
}

impl FirstStage {
    pub fn m(&self) -> usize {
        self.e_hat.ncols()
    }
}

/// Regresses every column of `z` on `x` and builds the normal scores of the residuals.
pub fn first_stage(x: &DesignMatrix, z: &DMatrix<f64>) -> Result<FirstStage> {
    let (n, m) = z.shape();
    if m == 0 {
        return Err(Error::InvalidArgument("first stage needs at least one endogenous column".into()));
    }
    if n != x.nrows() {
        return Err(Error::InvalidArgument(format!("endogenous block has {n} rows, design has {}", x.nrows())));
    }
    let qr = PivotedQr::factor(x.values(), x.column_names())?;
    let k = x.ncols();
    let mut delta_hat = DMatrix::zeros(k, m);
    let mut e_hat = DMatrix::zeros(n, m);
    let mut eta_hat = DMatrix::zeros(n, m);
    let mut ranks = DMatrix::zeros(n, m);
    for j in 0..m {
        let zj: DVector<f64> = z.column(j).into_owned();
        let d = qr.solve(&zj);
        let mut e = &zj - x.values() * &d;
        // an exact fit leaves rounding noise, which must not be ranked
        if e.amax() <= 1e-12 * zj.amax().max(f64::MIN_POSITIVE) {
            e.fill(0.0);
        }
        let r = average_ranks(e.as_slice())?;
        let scores = scores_from_ranks(&r).map_err(|err| match err {
            Error::ConstantInput(_) => Error::ConstantInput(format!(
                "first-stage residuals of endogenous column {} are constant; the control function is not identified",
                j + 1
            )),
            other => other,
        })?;
        delta_hat.column_mut(j).copy_from(&d);
        e_hat.column_mut(j).copy_from(&e);
        eta_hat.column_mut(j).copy_from_slice(&scores);
        ranks.column_mut(j).copy_from_slice(&r);
    }
    Ok(FirstStage { delta_hat, e_hat, eta_hat, ranks })
}

/// Ranks 1..n with ties replaced by their average rank.
pub fn average_ranks(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("ranking needs at least 2 values, got {n}")));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain("cannot rank non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

/// rank/(n+1) with average ranks for ties; never 0 or 1.
pub fn ecdf_rescaled(v: &[f64]) -> Result<Vec<f64>> {
    let denom = (v.len() + 1) as f64;
    Ok(average_ranks(v)?.into_iter().map(|r| r / denom).collect())
}

/// Φ⁻¹ of the rescaled empirical CDF.
pub fn normal_scores(v: &[f64]) -> Result<Vec<f64>> {
    scores_from_ranks(&average_ranks(v)?)
}

/// Scores from ranks, computed on the lower half and reflected so that the
/// result is exactly antisymmetric around the median rank.
fn scores_from_ranks(ranks: &[f64]) -> Result<Vec<f64>> {
    let n = ranks.len();
    let n1 = (n + 1) as f64;
    if ranks.iter().all(|&r| r == ranks[0]) {
        return Err(Error::ConstantInput("all values are equal, normal scores are undefined".into()));
    }
    ranks
        .iter()
        .map(|&r| {
            let mirror = n1 - r;
            if r == mirror {
                Ok(0.0)
            } else if r < mirror {
                std_normal_quantile(r / n1)
            } else {
                std_normal_quantile(mirror / n1).map(|q| -q)
            }
        })
        .collect()
}
