//! Conditionally orthonormal transforms of the centered treatment components.
//!
//! With `c = s - E(s|X)` and `Σ̄(t) = E{cov(s|X) | βᵀX = t}`, the recursion
//! `W₁ = c₁/sd₁`, `W̃_k = c_k - Σ_{j<k} C_jk W_j`, `W_k = W̃_k/sd_k` is the
//! forward substitution `c = L W` with `L` the lower Cholesky factor of
//! `Σ̄(t)`: `sd_k = L_kk` and `C_jk = L_kj`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{IndexFrame, KernelConfig, Neighbors};
use crate::randomization::{DesignCache, RandomizationSpec, TreatmentKind};
use serde::{Deserialize, Serialize};

/// Relative floor on `sd_k / sqrt(Σ̄_kk)`.
const COLLINEARITY_FLOOR: f64 = 1e-6;

/// `Σ̄(t)` at observation `i`'s index value: exact when the law does not
/// depend on the covariates, otherwise a kernel regression of the known
/// per-observation covariances.
pub(crate) fn conditional_cov(design: &DesignCache, nb: &Neighbors, i: usize, at: f64) -> Result<Vec<f64>> {
    let kk = design.k * design.k;
    if !design.depends_on_x {
        return Ok(design.cov[i * kk..(i + 1) * kk].to_vec());
    }
    let total = nb.total();
    if !(total > 0.0) {
        return Err(Error::EmptyNeighborhood {
            target: format!("{at}"),
        });
    }
    let mut out = vec![0.0; kk];
    for (&j, &w) in nb.idx.iter().zip(&nb.k) {
        let w = w / total;
        for (o, v) in out.iter_mut().zip(&design.cov[j * kk..(j + 1) * kk]) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Lower Cholesky factor (row-major `k×k`).
pub(crate) fn cholesky_lower(sigma: &[f64], k: usize, at: f64) -> Result<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..=a {
            let mut v = sigma[a * k + b];
            for c in 0..b {
                v -= l[a * k + c] * l[b * k + c];
            }
            if a == b {
                let scale = sigma[a * k + a].abs().sqrt();
                let sd = v.max(0.0).sqrt();
                if !(sd > COLLINEARITY_FLOOR * scale) {
                    return Err(Error::CollinearTreatment { element: a + 1, at, sd });
                }
                l[a * k + a] = sd;
            } else {
                l[a * k + b] = v / l[b * k + b];
            }
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub(crate) fn forward_solve(l: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut x = vec![0.0; k];
    for a in 0..k {
        let mut v = b[a];
        for c in 0..a {
            v -= l[a * k + c] * x[c];
        }
        x[a] = v / l[a * k + a];
    }
    x
}

/// Per-observation W values with the transform that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WBasis {
    pub k: usize,
    /// `n×K` row-major `W` values.
    pub w: Vec<f64>,
    /// `n×K` conditional standard deviations `sd(W̃_k | βᵀX)`.
    pub sd: Vec<f64>,
    /// `n×K×K` coefficients, `coef[i][j][k] = C_jk(βᵀxᵢ)` for `j < k`, zero
    /// elsewhere.
    pub coef: Vec<f64>,
    pub index: Vec<f64>,
}

impl WBasis {
    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn w(&self, i: usize) -> &[f64] {
        &self.w[i * self.k..(i + 1) * self.k]
    }

    pub fn sd(&self, i: usize) -> &[f64] {
        &self.sd[i * self.k..(i + 1) * self.k]
    }

    /// `C_jk` at observation `i` (0-based `j < k`).
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coef[i * self.k * self.k + j * self.k + k]
    }
}

/// Builds the W-basis at `beta` for `k` components of treatment kind `kind`.
pub fn build_w_basis(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    k: usize,
    kind: TreatmentKind,
    config: &KernelConfig,
) -> Result<WBasis> {
    if kind.components() != k {
        return Err(Error::Config(format!(
            "treatment kind has {} components, not {k}",
            kind.components()
        )));
    }
    if beta.len() != dataset.p() {
        return Err(Error::DimensionMismatch {
            expected: dataset.p(),
            got: beta.len(),
        });
    }
    let spec = if kind == spec.kind() { spec.clone() } else { spec.with_kind(kind)? };
    let design = DesignCache::new(dataset, &spec)?;
    let t = dataset.index_values(beta);
    let frame = IndexFrame::new(&t);
    let rows = super::profile::per_observation(dataset.n(), |i| {
        let nb = frame.neighbors(t[i], config.family, config.h_u);
        let sigma = conditional_cov(&design, &nb, i, t[i])?;
        let l = cholesky_lower(&sigma, k, t[i])?;
        let w = forward_solve(&l, &design.c[i * k..(i + 1) * k], k);
        Ok((w, l))
    })?;
    let mut out = WBasis {
        k,
        w: Vec::with_capacity(k * t.len()),
        sd: Vec::with_capacity(k * t.len()),
        coef: Vec::with_capacity(k * k * t.len()),
        index: t,
    };
    for (w, l) in rows {
        out.w.extend(w);
        out.sd.extend((0..k).map(|a| l[a * k + a]));
        for j in 0..k {
            for kk in 0..k {
                out.coef.push(if j < kk { l[kk * k + j] } else { 0.0 });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_dose_quadratic_transform() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        let z = vec![0.1, 0.5, 0.9, 0.3, 0.7];
        let d = Dataset::from_rows(&rows, z.clone(), vec![0.0; 5]).unwrap();
        let spec = RandomizationSpec::uniform_dose(0.0, 1.0, 2).unwrap();
        let cfg = KernelConfig::single(KernelFamily::Gaussian, 1.0).unwrap();
        let wb = build_w_basis(&d, &spec, &[1.0, 0.0], 2, spec.kind(), &cfg).unwrap();
        let r12 = 12f64.sqrt();
        for i in 0..5 {
            assert_abs_diff_eq!(wb.sd(i)[0], 1.0 / r12, epsilon = 1e-14);
            assert_abs_diff_eq!(wb.c(i, 0, 1), 1.0 / r12, epsilon = 1e-14);
            assert_abs_diff_eq!(wb.w(i)[0], (z[i] - 0.5) * r12, epsilon = 1e-12);
        }
    }

    #[test]
    fn binary_single_normalization() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.2]).collect();
        let z = vec![1.0, 0.0, 0.0, 1.0];
        let d = Dataset::from_rows(&rows, z.clone(), vec![0.0; 4]).unwrap();
        let spec = RandomizationSpec::binary_constant(0.3).unwrap();
        let cfg = KernelConfig::single(KernelFamily::Epanechnikov, 1.0).unwrap();
        let kind = TreatmentKind::Categorical { arms: 1 };
        let wb = build_w_basis(&d, &spec, &[1.0], 1, kind, &cfg).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(wb.w(i)[0], (z[i] - 0.3) / (0.21f64).sqrt(), epsilon = 1e-14);
        }
    }

    #[test]
    fn cholesky_flags_collinear_components() {
        let sigma = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            cholesky_lower(&sigma, 2, 0.0),
            Err(Error::CollinearTreatment { element: 2, .. })
        ));
    }
}
