//! Index estimators: the four binary-treatment estimating equations, the
//! multi-component efficient equation and the outer solver.

mod fit;
mod pilot;
pub(crate) mod profile;
mod solve;
pub(crate) mod solver;
mod wbasis;

pub use fit::{predict_g, IndexFit, IndexFitSummary};
pub use pilot::PilotKind;
pub use profile::{profiled_wls, LooFit};
pub use solve::{fit_at_beta, solve_index, solve_index_best_effort, solve_index_with, SolveOptions, StartKind, WorkingModels};
pub use wbasis::{build_w_basis, WBasis};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::local_fit::{require_binary, FStar, FitContext};
use crate::randomization::{DesignCache, RandomizationSpec, TreatmentKind, VARIANCE_FLOOR};
use profile::{evaluate, Equation};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Locally efficient equation with estimated `ĝ`, `ĝ'` and `û`.
    #[serde(rename = "m1")]
    M1,
    /// Working `g*`, `h*` with estimated `û`.
    #[serde(rename = "m2")]
    M2,
    /// Estimated `ĝ`, `ĝ'` with working `u*`.
    #[serde(rename = "m3")]
    M3,
    /// Profiled least squares on the transformed response.
    #[serde(rename = "m4")]
    M4,
    /// Efficient equation for a polynomial dose.
    #[serde(rename = "cont")]
    ContEff,
    /// Efficient equation for categorical arms.
    #[serde(rename = "cat")]
    CatEff,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::M1 => "m1",
            Method::M2 => "m2",
            Method::M3 => "m3",
            Method::M4 => "m4",
            Method::ContEff => "cont",
            Method::CatEff => "cat",
        }
    }

    pub(crate) fn check_kind(self, kind: TreatmentKind) -> Result<()> {
        let ok = match self {
            Method::M1 | Method::M2 | Method::M3 | Method::M4 => kind == TreatmentKind::Binary,
            Method::ContEff => matches!(kind, TreatmentKind::ContinuousDose { .. }),
            Method::CatEff => matches!(kind, TreatmentKind::Categorical { .. }),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedKind {
                kind: kind.name().into(),
                detail: format!("method {} does not apply", self.name()),
            })
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" | "i" => Ok(Method::M1),
            "m2" | "ii" => Ok(Method::M2),
            "m3" | "iii" => Ok(Method::M3),
            "m4" | "iv" => Ok(Method::M4),
            "cont" | "conteff" => Ok(Method::ContEff),
            "cat" | "cateff" => Ok(Method::CatEff),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Index coefficients with the first coordinate pinned to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct IndexParam {
    beta: Vec<f64>,
}

impl IndexParam {
    /// From the free coordinates `β_L`.
    pub fn from_free(free: &[f64]) -> Self {
        let mut beta = Vec::with_capacity(free.len() + 1);
        beta.push(1.0);
        beta.extend_from_slice(free);
        IndexParam { beta }
    }

    /// From a full vector whose first coordinate must be exactly one.
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::Config("index needs at least two coordinates".into()));
        }
        if beta[0] != 1.0 {
            return Err(Error::Config(format!("first index coefficient must be 1, got {}", beta[0])));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("index coefficients must be finite".into()));
        }
        Ok(IndexParam { beta })
    }

    /// Rescales any vector with nonzero first coordinate.
    pub fn normalized(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v[0] == 0.0 {
            return Err(Error::Config("cannot pin a zero first coordinate".into()));
        }
        Self::new(v.iter().map(|a| a / v[0]).collect())
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn free(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }
}

impl TryFrom<Vec<f64>> for IndexParam {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        IndexParam::new(v)
    }
}

impl From<IndexParam> for Vec<f64> {
    fn from(p: IndexParam) -> Self {
        p.beta
    }
}

fn check_beta(dataset: &Dataset, beta: &[f64]) -> Result<()> {
    if dataset.p() < 2 {
        return Err(Error::Config("index estimation needs p ≥ 2".into()));
    }
    if beta.len() != dataset.p() {
        return Err(Error::DimensionMismatch {
            expected: dataset.p(),
            got: beta.len(),
        });
    }
    Ok(())
}

/// `Ỹᵢ = {zᵢ - E(Z|xᵢ)} yᵢ / var(Z|xᵢ)`.
pub fn transform_y(dataset: &Dataset, spec: &RandomizationSpec) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dataset.n());
    let mut bad = Vec::new();
    for i in 0..dataset.n() {
        let x = dataset.x(i);
        let var = spec.var_given_x(x)?;
        if !(var >= VARIANCE_FLOOR) {
            bad.push(i);
            continue;
        }
        let e = spec.mean_given_x(x)?[0];
        out.push((dataset.z()[i] - e) * dataset.y()[i] / var);
    }
    if !bad.is_empty() {
        return Err(Error::DegenerateVariance { rows: bad });
    }
    Ok(out)
}

/// Pilot index. The least-squares pilot uses the first component with a
/// usable direction; the direction search also scores both closed-form
/// pilots.
pub fn pilot_index(dataset: &Dataset, spec: &RandomizationSpec, kind: PilotKind) -> Result<IndexParam> {
    check_beta(dataset, &vec![1.0; dataset.p()])?;
    let design = DesignCache::new(dataset, spec)?;
    let yt = pilot::transformed(&design)?;
    let beta = match kind {
        PilotKind::LeastSquares => pilot::least_squares(&design, &yt).into_iter().next().ok_or_else(|| {
            Error::DegenerateConfiguration("no least-squares pilot has a usable first coordinate".into())
        })?,
        PilotKind::OuterGradient => pilot::outer_gradient(&design, &yt)?,
        PilotKind::DirectionSearch => {
            let mut extra = pilot::least_squares(&design, &yt);
            extra.extend(pilot::outer_gradient(&design, &yt).ok());
            pilot::direction_search(&design, &extra)?
        }
    };
    IndexParam::new(beta)
}

/// The locally efficient estimating function, averaged over observations.
pub fn score_method1(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    f_star: &FStar,
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    check_beta(dataset, beta)?;
    require_binary(spec)?;
    let ctx = FitContext::new(dataset, spec, f_star)?;
    evaluate(&ctx, config, beta, Equation::Efficient)
}

/// Estimating function with working `g*` and `h*`.
pub fn score_method2(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    f_star: &FStar,
    g_star: &(dyn Fn(f64) -> f64 + Sync),
    h_star: &(dyn Fn(f64) -> f64 + Sync),
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    check_beta(dataset, beta)?;
    require_binary(spec)?;
    let ctx = FitContext::new(dataset, spec, f_star)?;
    evaluate(&ctx, config, beta, Equation::WorkingG { g: g_star, h: h_star })
}

/// Estimating function with working `u*`.
pub fn score_method3(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    f_star: &FStar,
    u_star: &(dyn Fn(f64) -> Vec<f64> + Sync),
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    check_beta(dataset, beta)?;
    require_binary(spec)?;
    let ctx = FitContext::new(dataset, spec, f_star)?;
    evaluate(&ctx, config, beta, Equation::WorkingU { u: u_star })
}

/// Profiled sum of squares `Σ_j Σ_i w_ij [{zᵢ - E(Z|xᵢ)}yᵢ - var(Z|xᵢ)(a_j + b_j dᵢⱼ)]²`.
pub fn objective_method4(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    config: &KernelConfig,
) -> Result<f64> {
    check_beta(dataset, beta)?;
    let design = DesignCache::new(dataset, spec)?;
    profile::ls_objective(&design, config, beta)
}

/// Gradient of [`objective_method4`] with respect to the free coordinates,
/// divided by `n`.
pub fn gradient_method4(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    check_beta(dataset, beta)?;
    let ctx = FitContext::new(dataset, spec, &FStar::zero())?;
    evaluate(&ctx, config, beta, Equation::LeastSquares)
}

/// Efficient estimating function for `k` dose powers or arms.
pub fn score_efficient_multi(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    f_star: &FStar,
    k: usize,
    kind: TreatmentKind,
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    check_beta(dataset, beta)?;
    if kind.components() != k {
        return Err(Error::Config(format!(
            "treatment kind has {} components, not {k}",
            kind.components()
        )));
    }
    let spec = if kind == spec.kind() { spec.clone() } else { spec.with_kind(kind)? };
    let ctx = FitContext::new(dataset, &spec, f_star)?;
    evaluate(&ctx, config, beta, Equation::MultiEfficient)
}
