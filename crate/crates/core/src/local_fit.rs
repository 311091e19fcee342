//! Pointwise nonparametric fits on the index scale.
//!
//! Every public operation has a core counterpart working on a prepared
//! [`FitContext`] and a sorted [`IndexFrame`]; the estimators call the cores
//! once per observation and trial index.

use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{check_bandwidth, IndexFrame, KernelConfig, KernelFamily, Neighbors};
use crate::randomization::{DesignCache, RandomizationSpec, TreatmentKind};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Reciprocal-condition floor of the multi-arm local system.
pub const SYSTEM_RCOND_FLOOR: f64 = 1e-10;

/// Relative floor on kernel-ratio denominators (with normalized weights).
pub const DENOMINATOR_FLOOR: f64 = 1e-10;

/// Working model `f*` for the baseline response. The default is zero.
#[derive(Clone, Default)]
pub struct FStar(Option<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>>);

impl FStar {
    pub fn zero() -> Self {
        FStar(None)
    }

    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FStar(Some(Arc::new(f)))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_none()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.as_ref().map_or(0.0, |f| f(x))
    }
}

impl fmt::Debug for FStar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_zero() { "FStar(zero)" } else { "FStar(custom)" })
    }
}

/// Design quantities of one dataset together with `yᵢ - f*(xᵢ)`.
#[derive(Debug, Clone)]
pub struct FitContext {
    pub design: DesignCache,
    pub ystar: Vec<f64>,
}

impl FitContext {
    pub fn new(dataset: &Dataset, spec: &RandomizationSpec, f_star: &FStar) -> Result<Self> {
        let design = DesignCache::new(dataset, spec)?;
        let ystar = dataset
            .rows()
            .zip(dataset.y())
            .map(|(x, y)| y - f_star.eval(x))
            .collect();
        Ok(FitContext { design, ystar })
    }

    pub fn n(&self) -> usize {
        self.ystar.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLinearFit {
    /// Level `ĝ` at the target index value.
    pub alpha_c: f64,
    /// Slope `ĝ'` at the target index value.
    pub alpha_1: f64,
    pub at: f64,
    /// `|v₀v₂ - v₁²|` with normalized weights.
    pub condition: f64,
    pub v: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiArmLocalFit {
    /// `(ĝ_k, ĝ_k')` per arm or dose power.
    pub alphas: Vec<(f64, f64)>,
    pub at: f64,
    /// Reciprocal condition number of the system matrix.
    pub gram_condition: f64,
}

impl MultiArmLocalFit {
    pub fn levels(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| a.0).collect()
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| a.1).collect()
    }
}

/// Closed-form local linear solution from explicit weights.
///
/// `w` may be normalized or raw kernel values; the moments are normalized
/// before the singularity check, so both give the same fit. `d` holds index
/// offsets from the target, `s` the treatment, `c` the centered treatment and
/// `ystar` the working residual `y - f*(x)`.
pub fn local_linear_from_weights(
    w: &[f64],
    d: &[f64],
    s: &[f64],
    c: &[f64],
    ystar: &[f64],
    at: f64,
) -> Result<LocalLinearFit> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyNeighborhood {
            target: format!("{at}"),
        });
    }
    let (mut v0, mut v1, mut v2, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..w.len() {
        let wi = w[i] / total;
        let zc = wi * s[i] * c[i];
        v0 += zc;
        v1 += zc * d[i];
        v2 += zc * d[i] * d[i];
        let rc = wi * ystar[i] * c[i];
        s0 += rc;
        s1 += rc * d[i];
    }
    let det = v0 * v2 - v1 * v1;
    if !(det.abs() >= 1e-10 * (1.0 + (v0 * v2).abs())) {
        return Err(Error::SingularFit { at, v0, v1, v2 });
    }
    Ok(LocalLinearFit {
        alpha_c: (v2 * s0 - v1 * s1) / det,
        alpha_1: (v0 * s1 - v1 * s0) / det,
        at,
        condition: det.abs(),
        v: [v0, v1, v2],
    })
}

fn empty(at: f64) -> Error {
    Error::EmptyNeighborhood {
        target: format!("{at}"),
    }
}

pub(crate) fn binary_fit_core(ctx: &FitContext, nb: &Neighbors, at: f64) -> Result<LocalLinearFit> {
    if nb.is_empty() {
        return Err(empty(at));
    }
    let dz = &ctx.design;
    let k = dz.k;
    let s: Vec<f64> = nb.idx.iter().map(|&i| dz.s[i * k]).collect();
    let c: Vec<f64> = nb.idx.iter().map(|&i| dz.c[i * k]).collect();
    let y: Vec<f64> = nb.idx.iter().map(|&i| ctx.ystar[i]).collect();
    local_linear_from_weights(&nb.k, &nb.d, &s, &c, &y, at)
}

pub(crate) fn local_constant_core(ctx: &FitContext, nb: &Neighbors, at: f64) -> Result<f64> {
    if nb.is_empty() {
        return Err(empty(at));
    }
    let dz = &ctx.design;
    let k = dz.k;
    let total = nb.total();
    let (mut num, mut den) = (0.0, 0.0);
    for (&i, &w) in nb.idx.iter().zip(&nb.k) {
        let w = w / total;
        num += w * ctx.ystar[i] * dz.c[i * k];
        den += w * dz.s[i * k] * dz.c[i * k];
    }
    if !(den.abs() >= DENOMINATOR_FLOOR) {
        return Err(Error::DegenerateDenominator { at, value: den });
    }
    Ok(num / den)
}

/// Kernel ratio `Σ K var x_L / Σ K var` over a neighborhood.
pub(crate) fn u_hat_core(design: &DesignCache, nb: &Neighbors, at: f64) -> Result<Vec<f64>> {
    let q = design.p - 1;
    let total = nb.total();
    if !(total > 0.0) {
        return Err(Error::DegenerateDenominator { at, value: 0.0 });
    }
    let mut num = vec![0.0; q];
    let mut den = 0.0;
    for (&i, &w) in nb.idx.iter().zip(&nb.k) {
        let wv = w / total * design.var(i);
        den += wv;
        for (acc, x) in num.iter_mut().zip(design.x_lower(i)) {
            *acc += wv * x;
        }
    }
    if !(den >= DENOMINATOR_FLOOR) {
        return Err(Error::DegenerateDenominator { at, value: den });
    }
    num.iter_mut().for_each(|v| *v /= den);
    Ok(num)
}

/// Local linear fit of all `K` effect functions at one index value.
///
/// Solves `Σᵢ wᵢ [y*ᵢ - Σ_k s_ik (a_k + b_k dᵢ)] c_il (1, dᵢ) = 0` for every
/// component `l`, with the slope columns scaled by `h` for conditioning.
pub(crate) fn multi_fit_core(ctx: &FitContext, nb: &Neighbors, at: f64, h: f64) -> Result<MultiArmLocalFit> {
    if nb.is_empty() {
        return Err(empty(at));
    }
    let dz = &ctx.design;
    let k = dz.k;
    let m = 2 * k;
    let total = nb.total();
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for ((&i, &w), &d) in nb.idx.iter().zip(&nb.k).zip(&nb.d) {
        let w = w / total;
        let phi = [1.0, d / h];
        let s = &dz.s[i * k..(i + 1) * k];
        let c = &dz.c[i * k..(i + 1) * k];
        for l in 0..k {
            let wc = w * c[l];
            if wc == 0.0 {
                continue;
            }
            for al in 0..2 {
                let row = 2 * l + al;
                rhs[row] += wc * ctx.ystar[i] * phi[al];
                for kk in 0..k {
                    if s[kk] == 0.0 {
                        continue;
                    }
                    for be in 0..2 {
                        a[(row, 2 * kk + be)] += wc * s[kk] * phi[al] * phi[be];
                    }
                }
            }
        }
    }
    let sv = a.singular_values();
    let smax = sv.max();
    let rcond = if smax > 0.0 { sv.min() / smax } else { 0.0 };
    if !(rcond >= SYSTEM_RCOND_FLOOR) {
        return Err(Error::SingularSystem { at, rcond });
    }
    let sol = a.lu().solve(&rhs).ok_or(Error::SingularSystem { at, rcond })?;
    Ok(MultiArmLocalFit {
        alphas: (0..k).map(|kk| (sol[2 * kk], sol[2 * kk + 1] / h)).collect(),
        at,
        gram_condition: rcond,
    })
}

fn target_index(dataset: &Dataset, beta: &[f64], x0: &[f64]) -> Result<f64> {
    if beta.len() != dataset.p() {
        return Err(Error::DimensionMismatch {
            expected: dataset.p(),
            got: beta.len(),
        });
    }
    if x0.len() != dataset.p() {
        return Err(Error::DimensionMismatch {
            expected: dataset.p(),
            got: x0.len(),
        });
    }
    Ok(dot(beta, x0))
}

/// Variance-weighted kernel regression of `x_L` on the index, evaluated at
/// `βᵀx`, with bandwidth `h_u`.
pub fn u_hat(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    x: &[f64],
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    let at = target_index(dataset, beta, x)?;
    check_bandwidth(config.h_u)?;
    let design = DesignCache::new(dataset, spec)?;
    let frame = IndexFrame::new(&dataset.index_values(beta));
    let nb = frame.neighbors(at, config.family, config.h_u);
    u_hat_core(&design, &nb, at)
}

/// Local linear fit of `(g, g')` at `βᵀx₀` for binary treatment.
pub fn local_linear_binary(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    x0: &[f64],
    f_star: &FStar,
    config: &KernelConfig,
) -> Result<LocalLinearFit> {
    let at = target_index(dataset, beta, x0)?;
    require_binary(spec)?;
    let ctx = FitContext::new(dataset, spec, f_star)?;
    let frame = IndexFrame::new(&dataset.index_values(beta));
    let nb = frame.neighbors(at, config.family, config.h_g);
    binary_fit_core(&ctx, &nb, at)
}

/// Local constant fit of `g` at `βᵀx₀` for binary treatment.
pub fn local_constant_g(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    x0: &[f64],
    f_star: &FStar,
    config: &KernelConfig,
) -> Result<f64> {
    let at = target_index(dataset, beta, x0)?;
    require_binary(spec)?;
    let ctx = FitContext::new(dataset, spec, f_star)?;
    let frame = IndexFrame::new(&dataset.index_values(beta));
    let nb = frame.neighbors(at, config.family, config.h_g);
    local_constant_core(&ctx, &nb, at)
}

/// Local linear fit of every arm or dose-power effect at `βᵀx₀`. When `kind`
/// differs from the spec's own kind, the spec's law is reinterpreted under
/// `kind`.
pub fn local_linear_multi(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    x0: &[f64],
    f_star: &FStar,
    config: &KernelConfig,
    kind: TreatmentKind,
) -> Result<MultiArmLocalFit> {
    let at = target_index(dataset, beta, x0)?;
    let spec = if kind == spec.kind() { spec.clone() } else { spec.with_kind(kind)? };
    let ctx = FitContext::new(dataset, &spec, f_star)?;
    let frame = IndexFrame::new(&dataset.index_values(beta));
    let nb = frame.neighbors(at, config.family, config.h_g);
    multi_fit_core(&ctx, &nb, at, config.h_g)
}

pub(crate) fn require_binary(spec: &RandomizationSpec) -> Result<()> {
    match spec.kind() {
        TreatmentKind::Binary => Ok(()),
        other => Err(Error::UnsupportedKind {
            kind: other.name().into(),
            detail: "this fit is defined for binary treatment".into(),
        }),
    }
}

/// Kernel family and bandwidth pair used by the core routines.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Smoother {
    pub family: KernelFamily,
    pub h: f64,
}

impl Smoother {
    pub fn g(config: &KernelConfig) -> Self {
        Smoother {
            family: config.family,
            h: config.h_g,
        }
    }

    pub fn u(config: &KernelConfig) -> Self {
        Smoother {
            family: config.family,
            h: config.h_u,
        }
    }

    pub fn neighbors(&self, frame: &IndexFrame, at: f64) -> Neighbors {
        frame.neighbors(at, self.family, self.h)
    }
}
