//! The universal input record and its CSV representation.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::select_rows;

/// Outcomes `Y`, spatial coordinates and optional covariates `X` at `n`
/// locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    /// n × 2
    pub coords: DMatrix<f64>,
    /// n × d, `None` when no covariates were supplied.
    pub covariates: Option<DMatrix<f64>>,
    /// n × p
    pub outcomes: DMatrix<f64>,
    pub coord_names: [String; 2],
    pub covariate_names: Vec<String>,
    pub outcome_names: Vec<String>,
}

/// Column roles for [`ingest_csv`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvSchema {
    /// Identifier column; rows are numbered from 1 when absent.
    pub id: Option<String>,
    pub coords: [String; 2],
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
}

impl Dataset {
    /// Assembles a dataset with generated names, validating shapes.
    pub fn new(
        coords: DMatrix<f64>,
        covariates: Option<DMatrix<f64>>,
        outcomes: DMatrix<f64>,
    ) -> Result<Self> {
        let n = outcomes.nrows();
        let d = covariates.as_ref().map_or(0, |x| x.ncols());
        let ds = Dataset {
            ids: (1..=n).map(|i| i.to_string()).collect(),
            coords,
            covariates,
            outcome_names: (1..=outcomes.ncols()).map(|j| format!("y{j}")).collect(),
            outcomes,
            coord_names: ["s1".into(), "s2".into()],
            covariate_names: (1..=d).map(|j| format!("x{j}")).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.outcomes.nrows()
    }
    pub fn p(&self) -> usize {
        self.outcomes.ncols()
    }
    pub fn d(&self) -> usize {
        self.covariates.as_ref().map_or(0, |x| x.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let bad = |msg: String| Err(Error::Data(msg));
        if n < 4 {
            return bad(format!("need at least 4 rows, got {n}"));
        }
        if self.p() < 1 {
            return bad("need at least one outcome column".into());
        }
        if self.coords.shape() != (n, 2) {
            return bad(format!("coordinates must be {n} x 2, got {:?}", self.coords.shape()));
        }
        if self.ids.len() != n {
            return bad(format!("{} ids for {n} rows", self.ids.len()));
        }
        if let Some(x) = &self.covariates {
            if x.nrows() != n {
                return bad(format!("covariates have {} rows, outcomes have {n}", x.nrows()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return bad("covariates contain non-finite values".into());
            }
            if self.covariate_names.len() != x.ncols() {
                return bad("covariate names do not match covariate columns".into());
            }
        }
        if self.outcome_names.len() != self.p() {
            return bad("outcome names do not match outcome columns".into());
        }
        if self.coords.iter().chain(self.outcomes.iter()).any(|v| !v.is_finite()) {
            return bad("coordinates or outcomes contain non-finite values".into());
        }
        Ok(())
    }

    /// Rows `idx` in order; names are kept. Does not re-validate the row
    /// count so folds smaller than 4 can still be evaluated.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            coords: select_rows(&self.coords, idx),
            covariates: self.covariates.as_ref().map(|x| select_rows(x, idx)),
            outcomes: select_rows(&self.outcomes, idx),
            coord_names: self.coord_names.clone(),
            covariate_names: self.covariate_names.clone(),
            outcome_names: self.outcome_names.clone(),
        }
    }

    /// Schema matching the column names of this dataset.
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            id: Some("id".into()),
            coords: self.coord_names.clone(),
            covariates: self.covariate_names.clone(),
            outcomes: self.outcome_names.clone(),
        }
    }

    /// Writes `id, coords, covariates, outcomes` with full round-trip float
    /// precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.coord_names.iter().cloned());
        header.extend(self.covariate_names.iter().cloned());
        header.extend(self.outcome_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.ids[i].clone()];
            rec.extend(self.coords.row(i).iter().map(|v| fmt_f64(*v)));
            if let Some(x) = &self.covariates {
                rec.extend(x.row(i).iter().map(|v| fmt_f64(*v)));
            }
            rec.extend(self.outcomes.row(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a headed CSV file and assigns column roles. No standardization is
/// applied here.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    if schema.outcomes.is_empty() {
        return Err(Error::Data("schema declares no outcome columns".into()));
    }
    let (t, outs) = read_table(path, schema, true)?;
    let n = t.ids.len();
    let ds = Dataset {
        ids: t.ids,
        coords: t.coords,
        covariates: t.covariates,
        outcomes: DMatrix::from_row_slice(n, schema.outcomes.len(), &outs),
        coord_names: schema.coords.clone(),
        covariate_names: schema.covariates.clone(),
        outcome_names: schema.outcomes.clone(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Identifiers, coordinates and covariates of prediction sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTable {
    pub ids: Vec<String>,
    pub coords: DMatrix<f64>,
    pub covariates: Option<DMatrix<f64>>,
}

/// Reads the id, coordinate and covariate columns of `schema`; outcome
/// columns are ignored and need not be present.
pub fn ingest_sites(path: &Path, schema: &CsvSchema) -> Result<SiteTable> {
    let (t, _) = read_table(path, schema, false)?;
    if t.ids.is_empty() {
        return Err(Error::Data(format!("{} has no rows", path.display())));
    }
    Ok(t)
}

/// Sites plus the row-major outcome cells.
fn read_table(path: &Path, schema: &CsvSchema, with_outcomes: bool) -> Result<(SiteTable, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}' in {}", path.display())))
    };
    let id_col = schema.id.as_deref().map(find).transpose()?;
    let coord_cols = [find(&schema.coords[0])?, find(&schema.coords[1])?];
    let cov_cols: Vec<usize> = schema.covariates.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let out_cols: Vec<usize> = if with_outcomes {
        schema.outcomes.iter().map(|c| find(c)).collect::<Result<_>>()?
    } else {
        vec![]
    };

    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut covs = Vec::new();
    let mut outs = Vec::new();
    let mut seen = HashSet::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2; // header is line 1
        let cell = |col: usize| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "row {line}, column '{}': cannot parse '{raw}' as a number",
                    &headers[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {line}, column '{}': non-finite value '{raw}'",
                    &headers[col]
                )));
            }
            Ok(v)
        };
        let id = match id_col {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => (row + 1).to_string(),
        };
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("row {line}: duplicate id '{id}'")));
        }
        ids.push(id);
        for &c in &coord_cols {
            coords.push(cell(c)?);
        }
        for &c in &cov_cols {
            covs.push(cell(c)?);
        }
        for &c in &out_cols {
            outs.push(cell(c)?);
        }
    }
    let n = ids.len();
    let sites = SiteTable {
        ids,
        coords: DMatrix::from_row_slice(n, 2, &coords),
        covariates: (!cov_cols.is_empty()).then(|| DMatrix::from_row_slice(n, cov_cols.len(), &covs)),
    };
    Ok((sites, outs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("d.csv");
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn schema() -> CsvSchema {
        CsvSchema {
            id: Some("id".into()),
            coords: ["lon".into(), "lat".into()],
            covariates: vec![],
            outcomes: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn reads_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "id,lon,lat,a,b\nr1,0,0,1,2\nr2,1,0,3,4\nr3,0,1,5,6\nr4,1,1,7,9\n",
        );
        let ds = ingest_csv(&p, &schema()).unwrap();
        assert_eq!((ds.n(), ds.d(), ds.p()), (4, 0, 2));
        assert_eq!(ds.outcomes[(3, 1)], 9.0);
    }

    #[test]
    fn na_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "id,lon,lat,a,b\nr1,0,0,1,2\nr2,1,0,NA,4\nr3,0,1,5,6\nr4,1,1,7,9\n",
        );
        let msg = ingest_csv(&p, &schema()).unwrap_err().to_string();
        assert!(msg.contains("row 3") && msg.contains("'a'"), "{msg}");
    }

    #[test]
    fn missing_column_and_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "id,lon,lat,a\nr1,0,0,1\n");
        assert!(ingest_csv(&p, &schema()).unwrap_err().to_string().contains("'b'"));
        let p = write(
            dir.path(),
            "id,lon,lat,a,b\nr1,0,0,1,2\nr1,1,0,3,4\nr3,0,1,5,6\nr4,1,1,7,9\n",
        );
        assert!(ingest_csv(&p, &schema()).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn sites_ignore_outcome_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "id,lat,lon
q1,0.5,0.25
q2,1,2
");
        let t = ingest_sites(&p, &schema()).unwrap();
        assert_eq!(t.ids, vec!["q1", "q2"]);
        assert_eq!(t.coords[(0, 0)], 0.25);
        assert!(t.covariates.is_none());
        let p = write(dir.path(), "id,lon
q1,0.5
");
        assert!(ingest_sites(&p, &schema()).is_err());
    }

    #[test]
    fn round_trip_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let n = 9;
        let coords = DMatrix::from_fn(n, 2, |i, j| (i as f64 * 0.1 + j as f64).sqrt() / 3.0);
        let x = DMatrix::from_fn(n, 3, |i, j| ((i * 3 + j) as f64).sin() * 1e-7);
        let y = DMatrix::from_fn(n, 2, |i, j| std::f64::consts::PI * (i + j) as f64 / 7.0);
        let ds = Dataset::new(coords, Some(x), y).unwrap();
        let p = dir.path().join("rt.csv");
        ds.write_csv(&p).unwrap();
        let back = ingest_csv(&p, &ds.schema()).unwrap();
        assert_eq!(back, ds);
    }
}
