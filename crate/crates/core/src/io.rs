//! CSV ingestion and emission for observed data.
//!
//! Data rows are numbered from 1; the header is row 0.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::randomization::RandomizationSpec;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Which header columns hold the covariates, the treatment and the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub x_cols: Vec<String>,
    pub z_col: String,
    pub y_col: String,
}

impl ColumnRoles {
    pub fn new<S: Into<String>>(x_cols: impl IntoIterator<Item = S>, z_col: impl Into<String>, y_col: impl Into<String>) -> Self {
        ColumnRoles {
            x_cols: x_cols.into_iter().map(Into::into).collect(),
            z_col: z_col.into(),
            y_col: y_col.into(),
        }
    }

    /// `x1..xp`, `z`, `y`: the layout written by [`write_csv`].
    pub fn standard(p: usize) -> Self {
        ColumnRoles::new((1..=p).map(|j| format!("x{j}")), "z", "y")
    }
}

const MISSING: [&str; 5] = ["", "na", "n/a", "nan", "null"];

pub fn load_csv(path: impl AsRef<Path>, roles: &ColumnRoles, spec: &RandomizationSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, roles, spec)
}

/// Parses a headed CSV. Covariates, treatment and response must be numeric
/// and present in every row; treatment values must lie in the support of
/// `spec`.
pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles, spec: &RandomizationSpec) -> Result<Dataset> {
    if roles.x_cols.is_empty() {
        return Err(Error::Config("no covariate columns declared".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyFile);
    }
    let locate = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            row: 0,
            detail: format!("column '{name}' not found in header"),
        })
    };
    let x_idx = roles.x_cols.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let z_idx = locate(&roles.z_col)?;
    let y_idx = locate(&roles.y_col)?;
    let p = x_idx.len();
    let (mut x, mut z, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Schema {
                row,
                detail: format!("expected {expected_len} fields, found {len}"),
            },
            _ => Error::Csv(e),
        })?;
        let cell = |j: usize, name: &str| -> Result<f64> {
            let raw = rec.get(j).unwrap_or("");
            if MISSING.contains(&raw.to_ascii_lowercase().as_str()) {
                return Err(Error::MissingValue {
                    row,
                    column: name.to_string(),
                });
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::NonNumeric {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        for (&j, name) in x_idx.iter().zip(&roles.x_cols) {
            x.push(cell(j, name)?);
        }
        let zi = cell(z_idx, &roles.z_col)?;
        spec.check_treatment(zi).map_err(|detail| Error::Schema {
            row,
            detail: format!("column '{}': {detail}", roles.z_col),
        })?;
        z.push(zi);
        y.push(cell(y_idx, &roles.y_col)?);
    }
    if z.is_empty() {
        return Err(Error::EmptyFile);
    }
    Dataset::new(p, x, z, y)
}

/// Writes `x1..xp, z, y` with a header; [`ColumnRoles::standard`] reads it back.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let roles = ColumnRoles::standard(dataset.p());
    let mut header = roles.x_cols.clone();
    header.push(roles.z_col);
    header.push(roles.y_col);
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = dataset.x(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.z()[i].to_string());
        rec.push(dataset.y()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
