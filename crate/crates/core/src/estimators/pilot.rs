//! Closed-form pilot directions used to start the outer solver.
//!
//! Both pilots work with the transformed responses `Ỹ = cov(s|x)⁻¹ c y`,
//! whose conditional mean is the vector of effect functions at the index.

use super::wbasis::{cholesky_lower, forward_solve};
use crate::error::{Error, Result};
use crate::randomization::DesignCache;
use crate::kernel::{rule_of_thumb, BandwidthRole, IndexFrame, KernelFamily};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Maximum number of evaluation points of the gradient pilot.
const OPG_POINTS: usize = 400;
/// Candidate directions per free coordinate in the direction search.
const SEARCH_DIRECTIONS: usize = 64;
/// Maximum number of target points in the search criterion.
const SEARCH_TARGETS: usize = 150;
const SEARCH_SEED: u64 = 0x5ea2c4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    /// Least squares of `Ỹ_k` on `(1, x)`, rescaled so `β₁ = 1`.
    LeastSquares,
    /// Leading eigenvector of the averaged outer product of local gradients.
    OuterGradient,
    /// Best of a fixed set of directions under a scale-free leave-one-out
    /// criterion.
    DirectionSearch,
}

pub(crate) fn transformed(design: &DesignCache) -> Result<Vec<f64>> {
    let k = design.k;
    let mut out = Vec::with_capacity(design.n() * k);
    for i in 0..design.n() {
        let l = cholesky_lower(&design.cov[i * k * k..(i + 1) * k * k], k, f64::NAN)
            .map_err(|e| e.at_observation(i))?;
        let cy: Vec<f64> = design.c[i * k..(i + 1) * k].iter().map(|c| c * design.y[i]).collect();
        // cov⁻¹ = L⁻ᵀL⁻¹.
        let half = forward_solve(&l, &cy, k);
        let mut full = vec![0.0; k];
        for a in (0..k).rev() {
            let mut v = half[a];
            for b in a + 1..k {
                v -= l[b * k + a] * full[b];
            }
            full[a] = v / l[a * k + a];
        }
        out.extend(full);
    }
    Ok(out)
}

fn pin_first(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(v[0].abs() > 1e-3 * norm) || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|a| a / v[0]).collect())
}

/// One least-squares pilot per treatment component; components whose first
/// coefficient vanishes yield no pilot.
pub(crate) fn least_squares(design: &DesignCache, ytilde: &[f64]) -> Vec<Vec<f64>> {
    let n = design.n();
    let p = design.p;
    let k = design.k;
    let mut xtx = DMatrix::<f64>::zeros(p + 1, p + 1);
    for i in 0..n {
        let row = design.row(i);
        for a in 0..=p {
            let va = if a == 0 { 1.0 } else { row[a - 1] };
            for b in 0..=p {
                let vb = if b == 0 { 1.0 } else { row[b - 1] };
                xtx[(a, b)] += va * vb;
            }
        }
    }
    let Some(chol) = xtx.cholesky() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for comp in 0..k {
        let mut xty = DVector::<f64>::zeros(p + 1);
        for i in 0..n {
            let yv = ytilde[i * k + comp];
            xty[0] += yv;
            for (a, x) in design.row(i).iter().enumerate() {
                xty[a + 1] += x * yv;
            }
        }
        let coef = chol.solve(&xty);
        if let Some(b) = pin_first(&coef.as_slice()[1..]) {
            out.push(b);
        }
    }
    out
}

/// Outer-product-of-gradients pilot with a Gaussian product kernel.
pub(crate) fn outer_gradient(design: &DesignCache, ytilde: &[f64]) -> Result<Vec<f64>> {
    let n = design.n();
    let p = design.p;
    let k = design.k;
    let sd: Vec<f64> = (0..p)
        .map(|a| {
            let col: Vec<f64> = (0..n).map(|i| design.row(i)[a]).collect();
            crate::kernel::sample_sd(&col)
        })
        .collect();
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::DegenerateIndex);
    }
    let bw: Vec<f64> = sd.iter().map(|s| s * (n as f64).powf(-1.0 / (p as f64 + 4.0))).collect();
    let stride = n.div_ceil(OPG_POINTS).max(1);
    let mut m = DMatrix::<f64>::zeros(p, p);
    let mut used = 0usize;
    for i in (0..n).step_by(stride) {
        let xi = design.row(i);
        let mut g = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut rhs = DMatrix::<f64>::zeros(p + 1, k);
        for j in 0..n {
            let xj = design.row(j);
            let mut u2 = 0.0;
            for a in 0..p {
                let u = (xj[a] - xi[a]) / bw[a];
                u2 += u * u;
            }
            let w = (-0.5 * u2).exp();
            if w < 1e-12 {
                continue;
            }
            let mut basis = vec![1.0; p + 1];
            for a in 0..p {
                basis[a + 1] = (xj[a] - xi[a]) / bw[a];
            }
            for a in 0..=p {
                for b in 0..=p {
                    g[(a, b)] += w * basis[a] * basis[b];
                }
                for comp in 0..k {
                    rhs[(a, comp)] += w * basis[a] * ytilde[j * k + comp];
                }
            }
        }
        let Some(ch) = g.cholesky() else {
            continue;
        };
        let coef = ch.solve(&rhs);
        for comp in 0..k {
            let grad = DVector::from_fn(p, |a, _| coef[(a + 1, comp)] / bw[a]);
            m += &grad * grad.transpose();
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateConfiguration("no local gradient could be estimated".into()));
    }
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.imax();
    let v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    pin_first(&v).ok_or_else(|| {
        Error::DegenerateConfiguration("leading gradient direction has no first-coordinate component".into())
    })
}

/// Leave-one-out prediction error of a local linear regression of `y` on
/// `(1, c)` along the index, with the bandwidth tied to the spread of the
/// index so directions are compared at the same relative smoothing. Summed
/// over a strided subset of targets; targets whose local system is singular
/// are skipped.
pub(crate) fn scale_free_criterion(design: &DesignCache, beta: &[f64]) -> Result<f64> {
    let n = design.n();
    let k = design.k;
    let m = 2 * (k + 1);
    let t: Vec<f64> = (0..n).map(|i| crate::data::dot(design.row(i), beta)).collect();
    let h = rule_of_thumb(&t, n, BandwidthRole::GFit, 1.0)?;
    let frame = IndexFrame::new(&t);
    let stride = n.div_ceil(SEARCH_TARGETS).max(1);
    let regressors = |i: usize, d: f64, row: &mut [f64]| {
        row[0] = 1.0;
        row[1] = d / h;
        for a in 0..k {
            let c = design.c[i * k + a];
            row[2 * a + 2] = c;
            row[2 * a + 3] = c * d / h;
        }
    };
    let mut row = vec![0.0; m];
    let (mut total, mut used) = (0.0, 0usize);
    for j in (0..n).step_by(stride) {
        let nb = frame.neighbors(t[j], KernelFamily::Gaussian, h);
        let mut g = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for ((&i, &w), &d) in nb.idx.iter().zip(&nb.k).zip(&nb.d) {
            if i == j {
                continue;
            }
            regressors(i, d, &mut row);
            for p in 0..m {
                rhs[p] += w * row[p] * design.y[i];
                for q in 0..m {
                    g[(p, q)] += w * row[p] * row[q];
                }
            }
        }
        let Some(theta) = g.cholesky().map(|c| c.solve(&rhs)) else {
            continue;
        };
        regressors(j, 0.0, &mut row);
        let pred: f64 = row.iter().zip(theta.iter()).map(|(r, th)| r * th).sum();
        total += (design.y[j] - pred).powi(2);
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateConfiguration("no evaluable target in the direction search".into()));
    }
    Ok(total / used as f64)
}

/// The design with responses replaced by their residuals from a linear
/// regression on `(1, x)`. Centered treatment components are conditionally
/// mean zero, so `c·y` keeps its conditional mean while the part of the
/// baseline linear in `x` drops out of its noise.
pub(crate) fn residualized(design: &DesignCache) -> Result<DesignCache> {
    let (n, p) = (design.n(), design.p);
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { design.row(i)[j - 1] });
    let y = DVector::from_column_slice(&design.y);
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::DegenerateConfiguration(format!("baseline regression failed: {e}")))?;
    let mut out = design.clone();
    out.y = (y - x * coef).iter().copied().collect();
    Ok(out)
}

/// Scores a fixed pseudo-random set of directions (first coordinate
/// positive and not negligible) together with `extra` candidates and
/// returns the best, pinned to `β₁ = 1`. Directions are compared on
/// baseline-residualized responses.
pub(crate) fn direction_search(design: &DesignCache, extra: &[Vec<f64>]) -> Result<Vec<f64>> {
    let design = &residualized(design)?;
    let p = design.p;
    let m = SEARCH_DIRECTIONS * (p - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(SEARCH_SEED);
    let mut candidates: Vec<Vec<f64>> = extra.to_vec();
    if p == 2 {
        // Equal angles on the half circle.
        for i in 0..m {
            let a = std::f64::consts::PI * ((i as f64 + 0.5) / m as f64 - 0.5);
            candidates.extend(pin_first(&[a.cos(), a.sin()]));
        }
    } else {
        for _ in 0..m {
            let mut v: Vec<f64> = (0..p).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
            if v[0] < 0.0 {
                v.iter_mut().for_each(|a| *a = -*a);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if v[0] >= 0.05 * norm {
                candidates.extend(pin_first(&v));
            }
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for b in candidates {
        let Ok(c) = scale_free_criterion(design, &b) else {
            continue;
        };
        if c.is_finite() && best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, b));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::DegenerateConfiguration("direction search found no evaluable direction".into()))
}
