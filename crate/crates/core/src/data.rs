use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `n` observations of covariates `x ∈ ℝᵖ`, a treatment record and a response.
///
/// Covariates are stored row-major. The treatment is stored as a real number
/// whose interpretation depends on the randomization spec: 0/1 for binary,
/// the arm index `0..=K` (0 = control) for categorical, the dose otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    p: usize,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(p: usize, x: Vec<f64>, z: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("covariate dimension must be positive".into()));
        }
        let n = z.len();
        if y.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: y.len(),
            });
        }
        if x.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: x.len(),
            });
        }
        if let Some(i) = (0..n).find(|&i| {
            !z[i].is_finite() || !y[i].is_finite() || x[i * p..(i + 1) * p].iter().any(|v| !v.is_finite())
        }) {
            return Err(Error::Schema {
                row: i,
                detail: "non-finite value".into(),
            });
        }
        Ok(Dataset { p, x, z, y })
    }

    /// Builds a dataset from covariate rows.
    pub fn from_rows(rows: &[Vec<f64>], z: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: r.len(),
            });
        }
        let x = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Dataset::new(p.max(1), x, z, y)
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// The lower `p-1` coordinates of row `i`.
    pub fn x_lower(&self, i: usize) -> &[f64] {
        &self.x[i * self.p + 1..(i + 1) * self.p]
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.p)
    }

    /// Index values `βᵀxᵢ` for every row.
    pub fn index_values(&self, beta: &[f64]) -> Vec<f64> {
        self.rows().map(|r| dot(r, beta)).collect()
    }

    /// Rows selected by `idx` (with repetition), as used by resampling.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            x.extend_from_slice(self.x(i));
        }
        Dataset {
            p: self.p,
            x,
            z: idx.iter().map(|&i| self.z[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Same covariates and responses with a replaced treatment column.
    pub fn with_treatment(&self, z: Vec<f64>) -> Result<Dataset> {
        if z.len() != self.n() {
            return Err(Error::LengthMismatch {
                left: self.n(),
                right: z.len(),
            });
        }
        Ok(Dataset {
            p: self.p,
            x: self.x.clone(),
            z,
            y: self.y.clone(),
        })
    }

    /// Same covariates and treatments with a replaced response column.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Dataset> {
        if y.len() != self.n() {
            return Err(Error::LengthMismatch {
                left: self.n(),
                right: y.len(),
            });
        }
        Ok(Dataset {
            p: self.p,
            x: self.x.clone(),
            z: self.z.clone(),
            y,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}
