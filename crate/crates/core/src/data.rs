//! Datasets, model specifications and CSV ingestion.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::DesignMatrix;

/// Column-labelled table of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    pub provenance: String,
    /// Rows removed during ingestion because a used cell was missing or non-numeric.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, provenance: impl Into<String>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Data(format!("{} names for {} columns", names.len(), columns.len())));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Data("columns have unequal lengths".into()));
        }
        let unique: HashSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Data("duplicate column names".into()));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains missing or non-finite values".into()));
        }
        Ok(Self { names, columns, provenance: provenance.into(), dropped_rows: 0 })
    }

    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|c| c == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| Error::Data(format!("column `{name}` not found")))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|c| c == name)
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.has_column(&name) {
            return Err(Error::Data(format!("column `{name}` already exists")));
        }
        if !self.columns.is_empty() && values.len() != self.n() {
            return Err(Error::Data(format!("column `{name}` has {} rows, expected {}", values.len(), self.n())));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Rows selected by `rows` (with repetition), as used by the pairs bootstrap.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            provenance: self.provenance.clone(),
            dropped_rows: 0,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for i in 0..self.n() {
            w.write_record(self.columns.iter().map(|c| format!("{}", c[i])))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A reference to a data column, optionally squared (`square:exper`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRef {
    pub source: String,
    pub squared: bool,
}

impl ColumnRef {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (source, squared) = match text.strip_prefix("square:") {
            Some(rest) => (rest.trim(), true),
            None => (text, false),
        };
        if source.is_empty() {
            return Err(Error::InvalidArgument(format!("empty column reference `{text}`")));
        }
        Ok(Self { source: source.to_string(), squared })
    }

    pub fn name(&self) -> String {
        if self.squared {
            format!("{}^2", self.source)
        } else {
            self.source.clone()
        }
    }

    fn values(&self, data: &Dataset) -> Result<Vec<f64>> {
        if let Ok(v) = data.column(&self.name()) {
            return Ok(v.to_vec());
        }
        let v = data.column(&self.source)?;
        Ok(if self.squared { v.iter().map(|a| a * a).collect() } else { v.to_vec() })
    }
}

/// Role assignment: outcome `y`, exogenous `x` (intercept implied) and
/// endogenous `z` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: ColumnRef,
    pub exogenous: Vec<ColumnRef>,
    pub endogenous: Vec<ColumnRef>,
}

/// Arrays bound from a dataset according to a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub y: DVector<f64>,
    pub x: DesignMatrix,
    pub z: DMatrix<f64>,
    pub z_names: Vec<String>,
}

impl BoundModel {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.z.ncols()
    }

    /// Rows selected by `rows` (with repetition).
    pub fn select_rows(&self, rows: &[usize]) -> Result<BoundModel> {
        let xv = self.x.values();
        let x = DMatrix::from_fn(rows.len(), xv.ncols(), |i, j| xv[(rows[i], j)]);
        Ok(BoundModel {
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            x: DesignMatrix::new(x, self.x.column_names().to_vec(), self.x.has_intercept())?,
            z: DMatrix::from_fn(rows.len(), self.z.ncols(), |i, j| self.z[(rows[i], j)]),
            z_names: self.z_names.clone(),
        })
    }
}

impl ModelSpec {
    pub fn new<S: AsRef<str>>(outcome: &str, exogenous: &[S], endogenous: &[S]) -> Result<Self> {
        let outcome = ColumnRef::parse(outcome)?;
        let exogenous = exogenous.iter().map(|s| ColumnRef::parse(s.as_ref())).collect::<Result<Vec<_>>>()?;
        let endogenous = endogenous.iter().map(|s| ColumnRef::parse(s.as_ref())).collect::<Result<Vec<_>>>()?;
        if endogenous.is_empty() {
            return Err(Error::InvalidArgument("at least one endogenous regressor is required".into()));
        }
        let mut seen = HashSet::new();
        for r in std::iter::once(&outcome).chain(&exogenous).chain(&endogenous) {
            if !seen.insert(r.name()) {
                return Err(Error::InvalidArgument(format!("column `{}` is used in more than one role", r.name())));
            }
        }
        Ok(Self { outcome, exogenous, endogenous })
    }

    /// Number of exogenous regressors including the intercept.
    pub fn k(&self) -> usize {
        self.exogenous.len() + 1
    }

    pub fn m(&self) -> usize {
        self.endogenous.len()
    }

    pub fn exogenous_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string()).chain(self.exogenous.iter().map(ColumnRef::name)).collect()
    }

    pub fn endogenous_names(&self) -> Vec<String> {
        self.endogenous.iter().map(ColumnRef::name).collect()
    }

    pub fn bind(&self, data: &Dataset) -> Result<BoundModel> {
        let n = data.n();
        if n < self.k() + self.m() + 2 {
            return Err(Error::Data(format!(
                "need at least k + m + 2 = {} rows, dataset has {n}",
                self.k() + self.m() + 2
            )));
        }
        let y = DVector::from_vec(self.outcome.values(data)?);
        let cols = self
            .exogenous
            .iter()
            .map(|c| Ok((c.name(), c.values(data)?)))
            .collect::<Result<Vec<_>>>()?;
        let x = DesignMatrix::with_intercept(n, &cols)?;
        let mut z = DMatrix::zeros(n, self.m());
        for (j, c) in self.endogenous.iter().enumerate() {
            z.column_mut(j).copy_from_slice(&c.values(data)?);
        }
        Ok(BoundModel { y, x, z, z_names: self.endogenous_names() })
    }
}

/// Reads a comma-separated file with a header row, keeping the columns the
/// model uses. Rows with a missing or non-numeric used cell are dropped and
/// counted; squared columns requested with `square:` are appended as `name^2`.
pub fn ingest_csv(path: &Path, spec: &ModelSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let refs: Vec<&ColumnRef> = std::iter::once(&spec.outcome).chain(&spec.exogenous).chain(&spec.endogenous).collect();
    let mut sources: Vec<String> = Vec::new();
    for r in &refs {
        if !header.contains(&r.source) {
            return Err(Error::Data(format!("column `{}` not found in {}", r.source, path.display())));
        }
        if !sources.contains(&r.source) {
            sources.push(r.source.clone());
        }
    }
    let positions: Vec<usize> = sources.iter().map(|s| header.iter().position(|h| h == s).unwrap()).collect();

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); sources.len()];
    let mut total = 0usize;
    let mut dropped = 0usize;
    let mut row = vec![0.0; sources.len()];
    for record in reader.records() {
        let record = record?;
        total += 1;
        let mut ok = true;
        for (slot, &pos) in row.iter_mut().zip(&positions) {
            match record.get(pos).and_then(|cell| cell.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                Some(v) => *slot = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            for (c, v) in columns.iter_mut().zip(&row) {
                c.push(*v);
            }
        } else {
            dropped += 1;
        }
    }
    if total == 0 || dropped == total {
        return Err(Error::Data(format!("no usable rows in {}", path.display())));
    }
    if 2 * dropped > total {
        return Err(Error::Data(format!("{dropped} of {total} rows unparseable in {}", path.display())));
    }

    let mut data = Dataset::new(sources, columns, path.display().to_string())?;
    data.dropped_rows = dropped;
    for r in &refs {
        if r.squared && !data.has_column(&r.name()) {
            let v: Vec<f64> = data.column(&r.source)?.iter().map(|a| a * a).collect();
            data.push_column(r.name(), v)?;
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn small_file() {
        let f = write("y,x,z\n1,2,3\n4,5,6\n7,8,9.5\n");
        let spec = ModelSpec::new("y", &["x"], &["z"]).unwrap();
        let d = ingest_csv(f.path(), &spec).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.dropped_rows, 0);
        assert_eq!(d.column("z").unwrap(), &[3.0, 6.0, 9.5]);
    }

    #[test]
    fn blank_cell_drops_row() {
        let f = write("y,x,z\n1,2,3\n4,5,\n7,8,9\n1,1,1\n");
        let spec = ModelSpec::new("y", &["x"], &["z"]).unwrap();
        let d = ingest_csv(f.path(), &spec).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.dropped_rows, 1);
    }

    #[test]
    fn unused_columns_are_ignored() {
        let f = write("y,junk,x,z\n1,a,2,3\n4,b,5,6\n");
        let spec = ModelSpec::new("y", &["x"], &["z"]).unwrap();
        assert_eq!(ingest_csv(f.path(), &spec).unwrap().n(), 2);
    }

    #[test]
    fn wage_style_design_dimensions() {
        let mut s = String::from("lwage,educ,exper,married,parttime,union,smsa,nonwhite\n");
        for i in 0..40 {
            let v = i as f64;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                1.0 + 0.01 * v,
                8 + i % 9,
                (i * 7) % 31,
                i % 2,
                (i / 3) % 2,
                (i / 2) % 2,
                (i / 5) % 2,
                (i / 7) % 2
            ));
        }
        let f = write(&s);
        let spec = ModelSpec::new(
            "lwage",
            &["exper", "square:exper", "married", "parttime", "union", "smsa", "nonwhite"],
            &["educ"],
        )
        .unwrap();
        let d = ingest_csv(f.path(), &spec).unwrap();
        assert!(d.has_column("exper^2"));
        let bound = spec.bind(&d).unwrap();
        assert_eq!(bound.x.ncols(), 8);
        assert_eq!(bound.z.ncols(), 1);
        assert_eq!(bound.x.column_names()[2], "exper^2");
        assert_eq!(bound.x.values()[(3, 2)], 441.0);
    }

    #[test]
    fn error_paths() {
        let spec = ModelSpec::new("y", &["x"], &["z"]).unwrap();
        let f = write("y,x\n1,2\n");
        assert!(matches!(ingest_csv(f.path(), &spec), Err(Error::Data(_))));
        let f = write("y,x,z\n");
        assert!(matches!(ingest_csv(f.path(), &spec), Err(Error::Data(_))));
        let f = write("y,x,z\na,1,1\nb,1,1\n1,2,3\n");
        assert!(matches!(ingest_csv(f.path(), &spec), Err(Error::Data(_))));
        assert!(ModelSpec::new("y", &["x"], &["x"]).is_err());
        assert!(ModelSpec::new::<&str>("y", &["x"], &[]).is_err());
    }

    #[test]
    fn select_rows_repeats() {
        let d = Dataset::new(vec!["a".into()], vec![vec![1.0, 2.0, 3.0]], "t").unwrap();
        assert_eq!(d.select_rows(&[2, 2, 0]).column("a").unwrap(), &[3.0, 3.0, 1.0]);
    }
}
