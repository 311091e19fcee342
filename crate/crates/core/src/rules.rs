//! Decision rules derived from fitted effect curves, and the evaluation
//! metrics: percentage of correct decisions, inverse-probability-weighted
//! value and assignment cross-tabulation.

use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{predict_g, IndexFit};
use crate::randomization::{RandomizationSpec, TreatmentKind};
use serde::{Deserialize, Serialize};

/// Smallest admissible `pr(Z = d(x) | x)` in the value estimate.
pub const WEIGHT_FLOOR: f64 = 0.01;

/// Grid resolution of the dose search for polynomials of degree three or more.
const DOSE_GRID: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DecisionRule {
    /// Treat when `ĝ > 0`.
    SignRule,
    /// Arm with the largest effect, control (0) included.
    ArgmaxArm,
    /// Dose in `[a, b]` maximizing `Σ_k z^k ĝ_k`.
    DoseVertex { a: f64, b: f64 },
}

impl DecisionRule {
    /// The natural rule for a randomization spec.
    pub fn for_spec(spec: &RandomizationSpec) -> Result<Self> {
        match spec.kind() {
            TreatmentKind::Binary => Ok(DecisionRule::SignRule),
            TreatmentKind::Categorical { .. } => Ok(DecisionRule::ArgmaxArm),
            TreatmentKind::ContinuousDose { .. } => match spec.law() {
                crate::randomization::AssignmentLaw::UniformDose { a, b } => Ok(DecisionRule::DoseVertex { a: *a, b: *b }),
                _ => Ok(DecisionRule::DoseVertex { a: 0.0, b: 1.0 }),
            },
        }
    }

    /// Decision from effect values `ĝ₁..ĝ_K`.
    pub fn apply(&self, g: &[f64]) -> Result<f64> {
        match *self {
            DecisionRule::SignRule => {
                if g.len() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: g.len() });
                }
                Ok(if g[0] > 0.0 { 1.0 } else { 0.0 })
            }
            DecisionRule::ArgmaxArm => {
                let mut best = (0usize, 0.0);
                for (k, &v) in g.iter().enumerate() {
                    if v > best.1 {
                        best = (k + 1, v);
                    }
                }
                Ok(best.0 as f64)
            }
            DecisionRule::DoseVertex { a, b } => {
                if !(a < b) {
                    return Err(Error::Config(format!("dose range [{a}, {b}] needs a < b")));
                }
                Ok(best_dose(g, a, b))
            }
        }
    }
}

fn dose_value(g: &[f64], z: f64) -> f64 {
    let mut pw = 1.0;
    g.iter()
        .map(|gk| {
            pw *= z;
            pw * gk
        })
        .sum()
}

fn best_dose(g: &[f64], a: f64, b: f64) -> f64 {
    let endpoint = if dose_value(g, b) > dose_value(g, a) { b } else { a };
    match g.len() {
        0 => a,
        1 => endpoint,
        2 if g[1] < 0.0 => (-g[0] / (2.0 * g[1])).clamp(a, b),
        2 => endpoint,
        _ => {
            let mut best = (a, dose_value(g, a));
            for i in 1..DOSE_GRID {
                let z = a + (b - a) * i as f64 / (DOSE_GRID - 1) as f64;
                let v = dose_value(g, z);
                if v > best.1 {
                    best = (z, v);
                }
            }
            best.0
        }
    }
}

/// Decision for covariates `x` under `rule` using the fitted curve.
pub fn decide(rule: &DecisionRule, fit: &IndexFit, x: &[f64]) -> Result<f64> {
    rule.apply(&predict_g(fit, x)?)
}

/// Fraction of correct sign decisions per effect function:
/// `1 - n⁻¹Σ|I{ĝ_k > 0} - I{g_k > 0}|`.
pub fn pcd_from_values(estimated: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<f64>> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimated.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyFile);
    }
    let k = truth[0].len();
    let mut wrong = vec![0usize; k];
    for (e, t) in estimated.iter().zip(truth) {
        if e.len() != k || t.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: e.len().min(t.len()) });
        }
        for a in 0..k {
            if (e[a] > 0.0) != (t[a] > 0.0) {
                wrong[a] += 1;
            }
        }
    }
    let n = truth.len() as f64;
    Ok(wrong.iter().map(|&w| 1.0 - w as f64 / n).collect())
}

/// Per-component PCD of a fit over a covariate sample. Points where the
/// fitted curve cannot be evaluated count as `ĝ = 0`.
pub fn pcd(
    fit: &IndexFit,
    truth_g: &dyn Fn(f64) -> Vec<f64>,
    beta_true: &[f64],
    sample_x: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let k = fit.k();
    let est: Vec<Vec<f64>> = sample_x
        .iter()
        .map(|x| predict_g(fit, x).unwrap_or_else(|_| vec![0.0; k]))
        .collect();
    let truth: Vec<Vec<f64>> = sample_x.iter().map(|x| truth_g(dot(beta_true, x))).collect();
    pcd_from_values(&est, &truth)
}

/// `n⁻¹Σ yᵢ I{zᵢ = dᵢ} / pr(Z = dᵢ | xᵢ)` for given decisions.
pub fn value_of_decisions(dataset: &Dataset, spec: &RandomizationSpec, decisions: &[f64]) -> Result<f64> {
    if decisions.len() != dataset.n() {
        return Err(Error::LengthMismatch {
            left: dataset.n(),
            right: decisions.len(),
        });
    }
    let mut total = 0.0;
    for (i, &d) in decisions.iter().enumerate() {
        let prob = spec.assignment_prob(dataset.x(i), d)?.ok_or_else(|| Error::UnsupportedKind {
            kind: spec.kind().name().into(),
            detail: "the weighted value needs a discrete assignment law".into(),
        })?;
        if !(prob >= WEIGHT_FLOOR) {
            return Err(Error::UnstableWeight {
                row: i,
                prob,
                floor: WEIGHT_FLOOR,
            });
        }
        if dataset.z()[i] == d {
            total += dataset.y()[i] / prob;
        }
    }
    Ok(total / dataset.n() as f64)
}

/// Inverse-probability-weighted value of the rule implied by `fit`,
/// evaluated on `dataset`. Observations where the curve cannot be evaluated
/// are assigned control.
pub fn value_function(dataset: &Dataset, spec: &RandomizationSpec, fit: &IndexFit) -> Result<f64> {
    let rule = DecisionRule::for_spec(spec)?;
    if let DecisionRule::DoseVertex { .. } = rule {
        return Err(Error::UnsupportedKind {
            kind: spec.kind().name().into(),
            detail: "the weighted value needs a discrete assignment law".into(),
        });
    }
    let k = fit.k();
    let decisions = dataset
        .rows()
        .map(|x| {
            let g = predict_g(fit, x).unwrap_or_else(|_| vec![0.0; k]);
            rule.apply(&g)
        })
        .collect::<Result<Vec<f64>>>()?;
    value_of_decisions(dataset, spec, &decisions)
}

/// Counts of (real, recommended) treatment pairs over levels `0..=L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crosstab {
    /// `counts[real][recommended]`.
    pub counts: Vec<Vec<usize>>,
}

impl Crosstab {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn assignment_crosstab(real_z: &[f64], recommended_z: &[f64]) -> Result<Crosstab> {
    if real_z.len() != recommended_z.len() {
        return Err(Error::LengthMismatch {
            left: real_z.len(),
            right: recommended_z.len(),
        });
    }
    let level = |v: f64, row: usize| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Schema {
                row,
                detail: format!("treatment {v} is not a nonnegative integer level"),
            })
        }
    };
    let mut pairs = Vec::with_capacity(real_z.len());
    let mut top = 1;
    for (i, (&a, &b)) in real_z.iter().zip(recommended_z).enumerate() {
        let (a, b) = (level(a, i)?, level(b, i)?);
        top = top.max(a).max(b);
        pairs.push((a, b));
    }
    let mut counts = vec![vec![0usize; top + 1]; top + 1];
    for (a, b) in pairs {
        counts[a][b] += 1;
    }
    Ok(Crosstab { counts })
}
