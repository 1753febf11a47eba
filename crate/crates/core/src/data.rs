//! Tabular `(covariates, response)` data and its CSV form.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DOMAIN_EXPANSION;
use crate::points::{Interval, PointSet};

/// Fraction of rows held out for testing by [`Dataset::split`].
pub const TEST_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: PointSet,
    pub y: Vec<f64>,
    pub x_names: Vec<String>,
    pub y_name: String,
    /// Natural bounds of the response when known (e.g. `[0, 1]` for Beta
    /// responses). Otherwise the domain is derived from the observations.
    pub y_range: Option<Interval>,
}

/// Rows dropped while reading a CSV file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RejectReport {
    pub accepted: usize,
    /// `(1-based data line, reason)`.
    pub rejected: Vec<(usize, String)>,
}

impl Dataset {
    pub fn new(x: PointSet, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::domain(format!(
                "{} covariate rows but {} responses",
                x.len(),
                y.len()
            )));
        }
        let x_names = (1..=x.dim()).map(|q| format!("x_{q}")).collect();
        Ok(Self {
            x,
            y,
            x_names,
            y_name: "y".into(),
            y_range: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            x_names: self.x_names.clone(),
            y_name: self.y_name.clone(),
            y_range: self.y_range,
        }
    }

    /// One covariate column paired with the response.
    pub fn single_covariate(&self, q: usize) -> Dataset {
        Dataset {
            x: PointSet::from_scalars(&self.x.column(q)),
            y: self.y.clone(),
            x_names: vec![self.x_names[q].clone()],
            y_name: self.y_name.clone(),
            y_range: self.y_range,
        }
    }

    /// Seeded random split into (train, test) with `round(0.05 N)` test rows.
    pub fn split(&self, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((self.len() as f64) * TEST_FRACTION).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    /// Response domain: the natural range when known, else the observed
    /// range widened by 1% on each side.
    pub fn response_domain(&self) -> Result<Interval> {
        match self.y_range {
            Some(r) => Ok(r),
            None => Interval::expanded_from_values(&self.y, DOMAIN_EXPANSION),
        }
    }

    /// Observed per-covariate ranges (degenerate ranges are widened slightly).
    pub fn x_ranges(&self) -> Result<Vec<Interval>> {
        (0..self.dim())
            .map(|q| {
                let (lo, hi) = self.x.bounds()[q];
                if hi > lo {
                    Interval::new(lo, hi)
                } else {
                    Interval::expanded_from_values(&[lo], DOMAIN_EXPANSION)
                }
            })
            .collect()
    }

    /// Read a CSV with a header; covariate and response columns are picked by
    /// name. Rows with missing or non-numeric/non-finite cells are rejected
    /// and reported.
    pub fn from_csv(path: &Path, x_cols: &[String], y_col: &str) -> Result<(Dataset, RejectReport)> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::domain(format!("column '{name}' not found in {}", path.display())))
        };
        if x_cols.is_empty() {
            return Err(Error::domain("at least one covariate column is required"));
        }
        let xi: Vec<usize> = x_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;
        let yi = find(y_col)?;
        let mut coords = Vec::new();
        let mut y = Vec::new();
        let mut report = RejectReport::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> std::result::Result<f64, String> {
                let cell = rec.get(i).map(str::trim).unwrap_or("");
                if cell.is_empty() {
                    return Err(format!("missing value in column {}", &headers[i]));
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| format!("non-numeric value '{cell}' in column {}", &headers[i]))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("non-finite value in column {}", &headers[i]))
                }
            };
            let row: std::result::Result<Vec<f64>, String> = xi.iter().map(|&i| parse(i)).collect();
            match (row, parse(yi)) {
                (Ok(r), Ok(v)) => {
                    coords.extend(r);
                    y.push(v);
                    report.accepted += 1;
                }
                (Err(e), _) | (_, Err(e)) => report.rejected.push((line + 1, e)),
            }
        }
        if y.is_empty() {
            return Err(Error::domain(format!(
                "no usable rows in {} ({} rejected)",
                path.display(),
                report.rejected.len()
            )));
        }
        let mut ds = Dataset::new(PointSet::new(xi.len(), coords)?, y)?;
        ds.x_names = x_cols.to_vec();
        ds.y_name = y_col.to_string();
        Ok((ds, report))
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.x_names.clone();
        header.push(self.y_name.clone());
        w.write_record(&header)?;
        for (r, y) in self.x.rows().zip(&self.y) {
            let mut rec: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let x = PointSet::from_scalars(&(0..200).map(|v| v as f64).collect::<Vec<_>>());
        let ds = Dataset::new(x, (0..200).map(|v| v as f64).collect()).unwrap();
        let (train, test) = ds.split(4);
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 190);
        for v in &test.y {
            assert!(!train.y.contains(v));
        }
        assert_eq!(ds.split(4), (train, test));
    }

    #[test]
    fn csv_roundtrip_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,b,resp\n1,2,0.5\n3,,0.1\n4,5,NaN\n0.25,1e-3,7\n").unwrap();
        let (ds, rep) = Dataset::from_csv(&path, &["b".into(), "a".into()], "resp").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(rep.rejected.len(), 2);
        assert_eq!(ds.x.row(1), &[1e-3, 0.25]);
        let out = dir.path().join("o.csv");
        ds.to_csv(&out).unwrap();
        let (back, _) = Dataset::from_csv(&out, &["b".into(), "a".into()], "resp").unwrap();
        assert_eq!(back, ds);
        assert!(Dataset::from_csv(&path, &["zzz".into()], "resp").is_err());
    }
}
