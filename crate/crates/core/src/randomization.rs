//! The declared treatment assignment law and the conditional moments the
//! estimating equations consume.
//!
//! Every treatment kind is handled through a vector of treatment components
//! `s(z) = (s₁..s_K)`: `z` itself for binary treatment, the one-hot arm
//! indicators for categorical treatment and the powers `z, z², .., z^K` for a
//! polynomial dose. The law supplies `E(s|x)` and `cov(s|x)`.

use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Conditional treatment variances below this are rejected.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    Binary,
    /// `arms` active arms plus a control coded 0.
    Categorical { arms: usize },
    /// Effect polynomial in the dose of degree `degree`.
    ContinuousDose { degree: usize },
}

impl TreatmentKind {
    /// Number of treatment components `K`.
    pub fn components(self) -> usize {
        match self {
            TreatmentKind::Binary => 1,
            TreatmentKind::Categorical { arms } => arms,
            TreatmentKind::ContinuousDose { degree } => degree,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TreatmentKind::Binary => "binary",
            TreatmentKind::Categorical { .. } => "categorical",
            TreatmentKind::ContinuousDose { .. } => "continuous_dose",
        }
    }

    /// Treatment components `s(z)`.
    pub fn components_of(self, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.components()];
        self.fill_components(z, &mut out);
        out
    }

    pub(crate) fn fill_components(self, z: f64, out: &mut [f64]) {
        match self {
            TreatmentKind::Binary => out[0] = z,
            TreatmentKind::Categorical { .. } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let arm = z.round() as usize;
                if arm >= 1 && arm <= out.len() {
                    out[arm - 1] = 1.0;
                }
            }
            TreatmentKind::ContinuousDose { .. } => {
                let mut pw = 1.0;
                for v in out.iter_mut() {
                    pw *= z;
                    *v = pw;
                }
            }
        }
    }
}

/// One row of a tabulated law: covariates and the assignment probabilities of
/// the non-control levels at those covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedRow {
    pub x: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AssignmentLaw {
    ConstantBernoulli { p: f64 },
    /// `P(Z=1|x) = 1/(1+exp(-γᵀx))`.
    LogisticBernoulli { gamma: Vec<f64> },
    /// Arm probabilities `p₁..p_K`; control has `1-Σp_k`.
    CategoricalFixed { probs: Vec<f64> },
    UniformDose { a: f64, b: f64 },
    /// Per-covariate-vector probabilities, looked up by exact covariate value.
    Tabulated { rows: Vec<TabulatedRow> },
}

impl AssignmentLaw {
    fn name(&self) -> &'static str {
        match self {
            AssignmentLaw::ConstantBernoulli { .. } => "constant_bernoulli",
            AssignmentLaw::LogisticBernoulli { .. } => "logistic_bernoulli",
            AssignmentLaw::CategoricalFixed { .. } => "categorical_fixed",
            AssignmentLaw::UniformDose { .. } => "uniform_dose",
            AssignmentLaw::Tabulated { .. } => "tabulated",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    kind: TreatmentKind,
    law: AssignmentLaw,
}

/// A treatment kind paired with a compatible, validated assignment law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct RandomizationSpec {
    kind: TreatmentKind,
    law: AssignmentLaw,
    lookup: HashMap<Vec<u64>, usize>,
}

impl PartialEq for RandomizationSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.law == other.law
    }
}

impl TryFrom<RawSpec> for RandomizationSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        RandomizationSpec::new(raw.kind, raw.law)
    }
}

impl From<RandomizationSpec> for RawSpec {
    fn from(spec: RandomizationSpec) -> Self {
        RawSpec {
            kind: spec.kind,
            law: spec.law,
        }
    }
}

fn open_prob(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

fn row_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl RandomizationSpec {
    pub fn new(kind: TreatmentKind, law: AssignmentLaw) -> Result<Self> {
        let k = kind.components();
        if k == 0 {
            return Err(Error::InvalidSpec("K must be at least 1".into()));
        }
        let compatible = match (&kind, &law) {
            (TreatmentKind::Binary, AssignmentLaw::ConstantBernoulli { .. })
            | (TreatmentKind::Binary, AssignmentLaw::LogisticBernoulli { .. }) => true,
            (TreatmentKind::Binary, AssignmentLaw::Tabulated { .. }) => true,
            (TreatmentKind::Categorical { .. }, AssignmentLaw::CategoricalFixed { .. })
            | (TreatmentKind::Categorical { .. }, AssignmentLaw::Tabulated { .. }) => true,
            (TreatmentKind::Categorical { arms: 1 }, AssignmentLaw::ConstantBernoulli { .. })
            | (TreatmentKind::Categorical { arms: 1 }, AssignmentLaw::LogisticBernoulli { .. }) => true,
            (TreatmentKind::ContinuousDose { .. }, AssignmentLaw::UniformDose { .. })
            | (TreatmentKind::ContinuousDose { .. }, AssignmentLaw::ConstantBernoulli { .. })
            | (TreatmentKind::ContinuousDose { .. }, AssignmentLaw::LogisticBernoulli { .. }) => true,
            _ => false,
        };
        if !compatible {
            return Err(Error::InvalidSpec(format!(
                "law '{}' cannot drive treatment kind '{}'",
                law.name(),
                kind.name()
            )));
        }
        let mut lookup = HashMap::new();
        match &law {
            AssignmentLaw::ConstantBernoulli { p } => {
                if !open_prob(*p) {
                    return Err(Error::InvalidSpec(format!("probability {p} outside (0,1)")));
                }
            }
            AssignmentLaw::LogisticBernoulli { gamma } => {
                if gamma.is_empty() || gamma.iter().any(|g| !g.is_finite()) {
                    return Err(Error::InvalidSpec("logistic coefficients must be finite and nonempty".into()));
                }
            }
            AssignmentLaw::CategoricalFixed { probs } => check_arm_probs(probs, k)?,
            AssignmentLaw::UniformDose { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::InvalidSpec(format!("uniform dose range [{a}, {b}] needs a < b")));
                }
            }
            AssignmentLaw::Tabulated { rows } => {
                if rows.is_empty() {
                    return Err(Error::InvalidSpec("tabulated law has no rows".into()));
                }
                for (i, row) in rows.iter().enumerate() {
                    check_arm_probs(&row.probs, k)?;
                    match lookup.insert(row_key(&row.x), i) {
                        Some(prev) if rows[prev].probs != row.probs => {
                            return Err(Error::InvalidSpec(format!(
                                "tabulated rows {prev} and {i} share covariates but differ in probabilities"
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(RandomizationSpec { kind, law, lookup })
    }

    pub fn binary_constant(p: f64) -> Result<Self> {
        Self::new(TreatmentKind::Binary, AssignmentLaw::ConstantBernoulli { p })
    }

    pub fn binary_logistic(gamma: Vec<f64>) -> Result<Self> {
        Self::new(TreatmentKind::Binary, AssignmentLaw::LogisticBernoulli { gamma })
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        let arms = probs.len();
        Self::new(TreatmentKind::Categorical { arms }, AssignmentLaw::CategoricalFixed { probs })
    }

    pub fn uniform_dose(a: f64, b: f64, degree: usize) -> Result<Self> {
        Self::new(TreatmentKind::ContinuousDose { degree }, AssignmentLaw::UniformDose { a, b })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn kind(&self) -> TreatmentKind {
        self.kind
    }

    pub fn law(&self) -> &AssignmentLaw {
        &self.law
    }

    /// Same law driving a different treatment kind.
    pub fn with_kind(&self, kind: TreatmentKind) -> Result<Self> {
        Self::new(kind, self.law.clone())
    }

    /// Whether the law depends on the covariates.
    pub fn depends_on_x(&self) -> bool {
        matches!(
            self.law,
            AssignmentLaw::LogisticBernoulli { .. } | AssignmentLaw::Tabulated { .. }
        )
    }

    /// Probability of each non-control level at `x` (binary and categorical
    /// laws only).
    fn level_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.law {
            AssignmentLaw::ConstantBernoulli { p } => Ok(vec![*p]),
            AssignmentLaw::LogisticBernoulli { gamma } => {
                if gamma.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: gamma.len(),
                        got: x.len(),
                    });
                }
                Ok(vec![logistic(dot(gamma, x))])
            }
            AssignmentLaw::CategoricalFixed { probs } => Ok(probs.clone()),
            AssignmentLaw::Tabulated { rows } => {
                let expected = rows[0].x.len();
                if x.len() != expected {
                    return Err(Error::DimensionMismatch { expected, got: x.len() });
                }
                self.lookup
                    .get(&row_key(x))
                    .map(|&i| rows[i].probs.clone())
                    .ok_or_else(|| Error::InvalidSpec(format!("no tabulated probabilities for covariates {x:?}")))
            }
            AssignmentLaw::UniformDose { .. } => unreachable!("dose law has no discrete levels"),
        }
    }

    /// Raw moments `E(Z^k|x)` for `k = 1..=m`.
    fn raw_moments(&self, x: &[f64], m: usize) -> Result<Vec<f64>> {
        match &self.law {
            AssignmentLaw::UniformDose { a, b } => Ok((1..=m)
                .map(|k| {
                    let k1 = (k + 1) as i32;
                    (b.powi(k1) - a.powi(k1)) / ((k + 1) as f64 * (b - a))
                })
                .collect()),
            _ => {
                let p = self.level_probs(x)?[0];
                Ok(vec![p; m])
            }
        }
    }

    /// `E(Z|x)` for binary and dose kinds; `(E(Z₁|x)..E(Z_K|x))` for
    /// categorical kinds.
    pub fn mean_given_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            TreatmentKind::Categorical { .. } => self.level_probs(x),
            _ => Ok(vec![self.raw_moments(x, 1)?[0]]),
        }
    }

    pub fn var_given_x(&self, x: &[f64]) -> Result<f64> {
        if let TreatmentKind::Categorical { .. } = self.kind {
            return Err(Error::UnsupportedKind {
                kind: self.kind.name().into(),
                detail: "use the conditional moment vector for categorical arms".into(),
            });
        }
        Ok(self.moments(x)?.1[0])
    }

    pub fn power_moments_given_x(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        match self.kind {
            TreatmentKind::ContinuousDose { .. } => self.raw_moments(x, k),
            other => Err(Error::UnsupportedKind {
                kind: other.name().into(),
                detail: "power moments are defined for dose treatments".into(),
            }),
        }
    }

    /// Conditional mean vector and row-major covariance of the treatment
    /// components at `x`.
    pub fn moments(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.kind.components();
        let mut cov = vec![0.0; k * k];
        match self.kind {
            TreatmentKind::ContinuousDose { .. } => {
                let m = self.raw_moments(x, 2 * k)?;
                let mean = m[..k].to_vec();
                for a in 0..k {
                    for b in 0..k {
                        cov[a * k + b] = m[a + b + 1] - m[a] * m[b];
                    }
                }
                Ok((mean, cov))
            }
            _ => {
                let p = self.level_probs(x)?;
                for a in 0..k {
                    for b in 0..k {
                        cov[a * k + b] = if a == b { p[a] * (1.0 - p[a]) } else { -p[a] * p[b] };
                    }
                }
                Ok((p, cov))
            }
        }
    }

    /// `pr(Z = z | x)` for discrete kinds; `None` for dose laws with a density.
    pub fn assignment_prob(&self, x: &[f64], z: f64) -> Result<Option<f64>> {
        if let AssignmentLaw::UniformDose { .. } = self.law {
            return Ok(None);
        }
        let p = self.level_probs(x)?;
        let level = z.round() as usize;
        if level == 0 {
            Ok(Some(1.0 - p.iter().sum::<f64>()))
        } else {
            Ok(p.get(level - 1).copied().or(Some(0.0)))
        }
    }

    /// Checks that a recorded treatment value is in the support of the law.
    pub fn check_treatment(&self, z: f64) -> std::result::Result<(), String> {
        match &self.law {
            AssignmentLaw::UniformDose { a, b } => {
                if z < *a || z > *b {
                    return Err(format!("dose {z} outside [{a}, {b}]"));
                }
            }
            AssignmentLaw::CategoricalFixed { probs } => check_level(z, probs.len())?,
            AssignmentLaw::Tabulated { rows } => check_level(z, rows[0].probs.len())?,
            _ => check_level(z, 1)?,
        }
        Ok(())
    }

    /// Draws a treatment value at `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        if let AssignmentLaw::UniformDose { a, b } = self.law {
            return Ok(a + (b - a) * rng.random::<f64>());
        }
        let p = self.level_probs(x)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, pk) in p.iter().enumerate() {
            acc += pk;
            if u < acc {
                return Ok((k + 1) as f64);
            }
        }
        Ok(0.0)
    }
}

fn check_level(z: f64, levels: usize) -> std::result::Result<(), String> {
    if z.fract() != 0.0 || z < 0.0 || z > levels as f64 {
        return Err(format!("treatment {z} is not an integer level in 0..={levels}"));
    }
    Ok(())
}

fn check_arm_probs(probs: &[f64], k: usize) -> Result<()> {
    if probs.len() != k {
        return Err(Error::InvalidSpec(format!(
            "expected {k} arm probabilities, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|&p| !open_prob(p)) {
        return Err(Error::InvalidSpec(format!("arm probabilities {probs:?} must lie in (0,1)")));
    }
    if probs.iter().sum::<f64>() >= 1.0 {
        return Err(Error::InvalidSpec(format!(
            "arm probabilities {probs:?} leave no mass for control"
        )));
    }
    Ok(())
}

pub(crate) fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Per-observation treatment quantities for one dataset and spec: components
/// `s`, centered components `c = s - E(s|x)`, conditional means and
/// covariances. All arrays are row-major with `K` (or `K²`) entries per row.
#[derive(Debug, Clone)]
pub struct DesignCache {
    pub k: usize,
    pub p: usize,
    pub kind: TreatmentKind,
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub c: Vec<f64>,
    pub cov: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub depends_on_x: bool,
    /// Sample mean of `var(Z|xᵢ)` for the first component.
    pub mean_var: f64,
}

impl DesignCache {
    pub fn new(dataset: &Dataset, spec: &RandomizationSpec) -> Result<Self> {
        let n = dataset.n();
        let k = spec.kind().components();
        let kind = spec.kind();
        let mut s = vec![0.0; n * k];
        let mut e = Vec::with_capacity(n * k);
        let mut cov = Vec::with_capacity(n * k * k);
        let mut degenerate = Vec::new();
        for i in 0..n {
            let z = dataset.z()[i];
            spec.check_treatment(z)
                .map_err(|detail| Error::Schema { row: i, detail })?;
            kind.fill_components(z, &mut s[i * k..(i + 1) * k]);
            let (m, v) = spec.moments(dataset.x(i)).map_err(|err| err.at_observation(i))?;
            if (0..k).any(|a| !(v[a * k + a] >= VARIANCE_FLOOR)) {
                degenerate.push(i);
            }
            e.extend(m);
            cov.extend(v);
        }
        if !degenerate.is_empty() {
            return Err(Error::DegenerateVariance { rows: degenerate });
        }
        let c = s.iter().zip(&e).map(|(a, b)| a - b).collect();
        let x = dataset.rows().flat_map(|r| r.iter().copied()).collect();
        let mean_var = (0..n).map(|i| cov[i * k * k]).sum::<f64>() / n.max(1) as f64;
        Ok(DesignCache {
            k,
            p: dataset.p(),
            kind,
            s,
            e,
            c,
            cov,
            y: dataset.y().to_vec(),
            x,
            depends_on_x: spec.depends_on_x(),
            mean_var,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `var(Z|xᵢ)` of the first component.
    #[inline]
    pub fn var(&self, i: usize) -> f64 {
        self.cov[i * self.k * self.k]
    }

    /// Weight of observation `i` in the binary local fit, `sᵢcᵢ`, relative
    /// to its sample mean; treated units count more, controls not at all.
    #[inline]
    pub fn fit_share(&self, i: usize) -> f64 {
        self.s[i * self.k] * self.c[i * self.k] / self.mean_var
    }

    #[inline]
    pub fn centered(&self, i: usize) -> f64 {
        self.c[i * self.k]
    }

    #[inline]
    pub fn x_lower(&self, i: usize) -> &[f64] {
        &self.x[i * self.p + 1..(i + 1) * self.p]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}
