//! Artifacts written by the analysis commands. JSON carries the resolved
//! configuration; CSV carries the numeric tables only.

use serde::{Deserialize, Serialize};
use sitr_core::{
    BootstrapResult, ColumnRoles, CurveBand, Error, IndexFitSummary, KernelConfig, Method, PermutationBand,
    RandomizationSpec, Result, ScenarioId,
};
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceRecord {
    Data { path: PathBuf, columns: ColumnRoles },
    Scenario { id: ScenarioId, n: usize },
}

/// How the bandwidth in `kernel` was obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BandwidthRecord {
    Fixed,
    RuleOfThumb { constant: f64 },
    CrossValidation { candidates: Vec<f64> },
}

/// Everything needed to rerun the command that produced an artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub source: SourceRecord,
    pub design: RandomizationSpec,
    pub method: Method,
    pub kernel: KernelConfig,
    pub bandwidth: BandwidthRecord,
    pub fstar: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perm: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_beta: Option<bool>,
}

/// Fitted effect curve, `estimate[component][grid]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub grid: Vec<f64>,
    pub estimate: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRecord {
    #[serde(flatten)]
    pub band: PermutationBand,
    /// Per component, the fraction of grid points where the fitted curve
    /// lies above the band.
    pub exceedance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub config: RunRecord,
    pub fit: IndexFitSummary,
    pub curve: CurveRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<CurveBand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<PermutationRecord>,
}

/// One line of the CSV rendering. `section` is `kernel`, `beta` or
/// `curve`; curve rows carry the bootstrap band in `lower`/`median`/`upper`
/// or the permutation quantile in `upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub section: String,
    pub name: String,
    pub t: Option<f64>,
    pub estimate: Option<f64>,
    pub lower: Option<f64>,
    pub median: Option<f64>,
    pub upper: Option<f64>,
    pub flagged: Option<bool>,
}

impl TableRow {
    fn new(section: &str, name: String) -> Self {
        TableRow {
            section: section.to_string(),
            name,
            t: None,
            estimate: None,
            lower: None,
            median: None,
            upper: None,
            flagged: None,
        }
    }
}

impl Artifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn rows(&self) -> Vec<TableRow> {
        let mut rows = Vec::new();
        let kernel = &self.config.kernel;
        for (name, v) in [("h_g", kernel.h_g), ("h_u", kernel.h_u), ("trim", kernel.trim)] {
            let mut r = TableRow::new("kernel", name.into());
            r.estimate = Some(v);
            rows.push(r);
        }
        for (j, b) in self.fit.beta.iter().enumerate() {
            let mut r = TableRow::new("beta", format!("beta{}", j + 1));
            r.estimate = Some(*b);
            // β₁ is pinned; intervals cover the free coordinates only.
            if let Some((lo, hi)) = self.bootstrap.as_ref().and_then(|b| j.checked_sub(1).map(|f| b.ci_per_coord[f])) {
                r.lower = Some(lo);
                r.upper = Some(hi);
            }
            rows.push(r);
        }
        let flagged: Option<&[usize]> = self
            .band
            .as_ref()
            .map(|b| b.flagged.as_slice())
            .or(self.permutation.as_ref().map(|p| p.band.flagged.as_slice()));
        for (c, est) in self.curve.estimate.iter().enumerate() {
            for (i, &t) in self.curve.grid.iter().enumerate() {
                let mut r = TableRow::new("curve", format!("g{}", c + 1));
                r.t = Some(t);
                r.estimate = est[i];
                if let Some(band) = &self.band {
                    r.lower = band.lower[c][i];
                    r.median = band.median[c][i];
                    r.upper = band.upper[c][i];
                }
                if let Some(perm) = &self.permutation {
                    r.upper = perm.band.upper_quantile_curve[c][i];
                }
                r.flagged = flagged.map(|f| f.contains(&i));
                rows.push(r);
            }
        }
        rows
    }

    pub fn to_csv(&self) -> Result<String> {
        write_rows(&self.rows())
    }
}

pub fn write_rows(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_rows(text: &str) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Regroups `[grid][component]` values as `[component][grid]`.
pub fn by_component(values: &[Option<Vec<f64>>], k: usize) -> Vec<Vec<Option<f64>>> {
    (0..k)
        .map(|c| values.iter().map(|v| v.as_ref().map(|g| g[c])).collect())
        .collect()
}
