//! Per-index evaluation of the estimating equations and of the least-squares
//! objective. Every function here recomputes all profiled fits at the trial
//! index; nothing is carried over between trial values.

use super::wbasis::{cholesky_lower, conditional_cov, forward_solve};
use crate::error::{Error, Result};
use crate::kernel::{IndexFrame, KernelConfig, KernelFamily, Neighbors};
use crate::local_fit::{binary_fit_core, multi_fit_core, u_hat_core, FitContext, MultiArmLocalFit, Smoother};
use crate::randomization::DesignCache;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub type IndexFn<'a> = &'a (dyn Fn(f64) -> f64 + Sync);
pub type VecIndexFn<'a> = &'a (dyn Fn(f64) -> Vec<f64> + Sync);

/// Which estimating equation to evaluate.
#[derive(Clone, Copy)]
pub(crate) enum Equation<'a> {
    /// Locally efficient equation with estimated `ĝ, ĝ', û`.
    Efficient,
    /// Working `g*`, `h*` in place of `ĝ`, `ĝ'`.
    WorkingG { g: IndexFn<'a>, h: IndexFn<'a> },
    /// Working `u*` in place of `û`.
    WorkingU { u: VecIndexFn<'a> },
    /// Gradient of the profiled least-squares objective, divided by `n`.
    LeastSquares,
    /// Multi-component efficient equation with the conditional W-basis.
    MultiEfficient,
}

/// Runs `f` for every observation in parallel and returns the per-observation
/// values in index order, annotating the first failure with its observation.
pub(crate) fn per_observation<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = (0..n).into_par_iter().map(&f).collect();
    out.into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.at_observation(i)))
        .collect()
}

fn mean_of(terms: Vec<Vec<f64>>, q: usize) -> Vec<f64> {
    let n = terms.len() as f64;
    let mut acc = vec![0.0; q];
    for t in &terms {
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Neighbors under `h_u`, or `None` when `h_u = h_g` and the `h_g` window can
/// be reused.
fn u_neighbors(frame: &IndexFrame, at: f64, config: &KernelConfig) -> Option<Neighbors> {
    (config.h_u != config.h_g).then(|| frame.neighbors(at, config.family, config.h_u))
}

/// Mean of the per-observation terms with trimmed terms counted as zero;
/// an equation with every term trimmed carries no information.
fn trimmed_mean(terms: Vec<Option<Vec<f64>>>, q: usize) -> Result<Vec<f64>> {
    if terms.iter().all(Option::is_none) {
        return Err(Error::DegenerateConfiguration(
            "every observation is trimmed; the bandwidth is too small for the trimming threshold".into(),
        ));
    }
    Ok(mean_of(terms.into_iter().map(|t| t.unwrap_or_else(|| vec![0.0; q])).collect(), q))
}

/// Value of an estimating equation at `beta` (full vector with `β₁ = 1`).
pub(crate) fn evaluate(ctx: &FitContext, config: &KernelConfig, beta: &[f64], eq: Equation<'_>) -> Result<Vec<f64>> {
    let design = &ctx.design;
    let q = design.p - 1;
    let t = index_values(design, beta);
    let frame = IndexFrame::new(&t);
    let gs = Smoother::g(config);
    let n = ctx.n();
    match eq {
        Equation::LeastSquares => {
            let parts = per_observation(n, |j| profiled_ls_at(design, &frame, j, config.family, config.h_g, true))?;
            let grads: Vec<Vec<f64>> = parts.into_iter().map(|p| p.gradient).collect();
            Ok(mean_of(grads, q))
        }
        Equation::MultiEfficient => {
            let fits = per_observation(n, |i| multi_local(ctx, &frame, config, i))?;
            let scale = median_condition(&fits, config, ctx.design.k);
            let terms = per_observation(n, |i| match &fits[i] {
                Some((w, fit)) => {
                    let w = w * condition_weight(fit.gram_condition, scale);
                    if w == 0.0 {
                        Ok(None)
                    } else {
                        multi_term(ctx, &frame, config, i, fit, w).map(Some)
                    }
                }
                None => Ok(None),
            })?;
            trimmed_mean(terms, q)
        }
        Equation::WorkingG { g, h } => {
            let hs: Vec<f64> = t.iter().map(|&ti| h(ti)).collect();
            if hs.iter().all(|&v| v == 0.0) {
                return Err(Error::DegenerateConfiguration(
                    "working derivative h* vanishes at every observation".into(),
                ));
            }
            let us = Smoother::u(config);
            let terms = per_observation(n, |i| {
                let w = config.trim_weight(&gs.neighbors(&frame, t[i]));
                if w == 0.0 {
                    return Ok(None);
                }
                let nb = us.neighbors(&frame, t[i]);
                let u = u_hat_core(design, &nb, t[i])?;
                let r = w * (ctx.ystar[i] - design.s[i * design.k] * g(t[i])) * design.centered(i) * hs[i];
                Ok(Some(design.x_lower(i).iter().zip(&u).map(|(x, u)| r * (x - u)).collect()))
            })?;
            trimmed_mean(terms, q)
        }
        Equation::Efficient | Equation::WorkingU { .. } => {
            let terms = per_observation(n, |i| {
                let nb = gs.neighbors(&frame, t[i]);
                let w = config.trim_weight_with(&nb, |j| design.fit_share(j));
                if w == 0.0 {
                    return Ok(None);
                }
                let fit = binary_fit_core(ctx, &nb, t[i])?;
                let u = match eq {
                    Equation::WorkingU { u } => {
                        let v = u(t[i]);
                        if v.len() != q {
                            return Err(Error::DimensionMismatch { expected: q, got: v.len() });
                        }
                        v
                    }
                    _ => match u_neighbors(&frame, t[i], config) {
                        Some(nbu) => u_hat_core(design, &nbu, t[i])?,
                        None => u_hat_core(design, &nb, t[i])?,
                    },
                };
                let r = w * (ctx.ystar[i] - design.s[i * design.k] * fit.alpha_c) * design.centered(i) * fit.alpha_1;
                Ok(Some(design.x_lower(i).iter().zip(&u).map(|(x, u)| r * (x - u)).collect()))
            })?;
            trimmed_mean(terms, q)
        }
    }
}

pub(crate) fn index_values(design: &DesignCache, beta: &[f64]) -> Vec<f64> {
    (0..design.n()).map(|i| crate::data::dot(design.row(i), beta)).collect()
}

/// Relative conditioning below which a multi-component term is dropped,
/// and above which it keeps full weight, as multiples of the sample median.
const CONDITION_LO: f64 = 0.01;
const CONDITION_HI: f64 = 0.1;

/// Trim weight and local fit at observation `i`; `None` when the term is
/// trimmed, including, under trimming, a singular local system.
fn multi_local(
    ctx: &FitContext,
    frame: &IndexFrame,
    config: &KernelConfig,
    i: usize,
) -> Result<Option<(f64, MultiArmLocalFit)>> {
    let at = frame.t[i];
    let nb = frame.neighbors(at, config.family, config.h_g);
    // A single component counts neighbors as the binary equation does.
    let weight = if ctx.design.k == 1 {
        config.trim_weight_with(&nb, |j| ctx.design.fit_share(j))
    } else {
        config.trim_weight(&nb)
    };
    if weight == 0.0 {
        return Ok(None);
    }
    match multi_fit_core(ctx, &nb, at, config.h_g) {
        Ok(fit) => Ok(Some((weight, fit))),
        Err(Error::SingularSystem { .. }) if config.trim > 0.0 => Ok(None),
        Err(e) => Err(e),
    }
}

/// Median reciprocal condition number of the local systems. Returns 0,
/// which disables the conditioning weight, without trimming or for a single
/// component, whose local system the neighbor count already controls.
fn median_condition(fits: &[Option<(f64, MultiArmLocalFit)>], config: &KernelConfig, k: usize) -> f64 {
    if config.trim == 0.0 || k == 1 {
        return 0.0;
    }
    let mut r: Vec<f64> = fits.iter().flatten().map(|(_, f)| f.gram_condition).collect();
    if r.is_empty() {
        return 0.0;
    }
    r.sort_by(f64::total_cmp);
    r[r.len() / 2]
}

/// Smoothstep in `log10(rcond / scale)` between the two thresholds.
fn condition_weight(rcond: f64, scale: f64) -> f64 {
    if !(scale > 0.0) {
        return 1.0;
    }
    let (lo, hi) = (CONDITION_LO.log10(), CONDITION_HI.log10());
    let s = (((rcond / scale).log10() - lo) / (hi - lo)).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// One observation's contribution to the multi-component efficient
/// equation, scaled by `weight`.
fn multi_term(
    ctx: &FitContext,
    frame: &IndexFrame,
    config: &KernelConfig,
    i: usize,
    fit: &MultiArmLocalFit,
    weight: f64,
) -> Result<Vec<f64>> {
    let design = &ctx.design;
    let k = design.k;
    let q = design.p - 1;
    let at = frame.t[i];
    let nb = frame.neighbors(at, config.family, config.h_g);
    let nbu_owned = u_neighbors(frame, at, config);
    let nbu = nbu_owned.as_ref().unwrap_or(&nb);
    let sigma = conditional_cov(design, nbu, i, at)?;
    let l = cholesky_lower(&sigma, k, at)?;
    let c = &design.c[i * k..(i + 1) * k];
    let s = &design.s[i * k..(i + 1) * k];
    let slopes = fit.slopes();
    let levels = fit.levels();
    let resid = ctx.ystar[i] - s.iter().zip(&levels).map(|(a, b)| a * b).sum::<f64>();

    // m[s][k] = E{cov_sk(X) x_L | t} by kernel regression.
    let total = nbu.total();
    let mut m = vec![0.0; k * k * q];
    for (&j, &w) in nbu.idx.iter().zip(&nbu.k) {
        let w = w / total;
        let cv = &design.cov[j * k * k..(j + 1) * k * k];
        let xl = design.x_lower(j);
        for a in 0..k * k {
            let wc = w * cv[a];
            for (r, x) in xl.iter().enumerate() {
                m[a * q + r] += wc * x;
            }
        }
    }
    // v[s] = Σ_k ĝ'_k m[s][k]; projection coefficient E(W Û|t) = L⁻¹ v.
    let w_i = forward_solve(&l, c, k);
    let mut term = vec![0.0; q];
    let xl = design.x_lower(i);
    for kk in 0..k {
        for r in 0..q {
            term[r] += slopes[kk] * c[kk] * xl[r];
        }
    }
    for r in 0..q {
        let v: Vec<f64> = (0..k)
            .map(|a| (0..k).map(|b| slopes[b] * m[(a * k + b) * q + r]).sum())
            .collect();
        let proj = forward_solve(&l, &v, k);
        term[r] -= w_i.iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>();
    }
    term.iter_mut().for_each(|v| *v *= weight * resid);
    Ok(term)
}

/// Profiled weighted least-squares fit around one observation's index value.
pub(crate) struct ProfiledLs {
    /// `(a_l, b_l)` per component.
    pub coef: Vec<(f64, f64)>,
    pub ss: f64,
    pub gradient: Vec<f64>,
}

impl ProfiledLs {
    /// Squared error predicting observation `j` at offset zero.
    pub fn loo_error(&self, design: &DesignCache, j: usize) -> f64 {
        let k = design.k;
        let cv = &design.cov[j * k * k..(j + 1) * k * k];
        (0..k)
            .map(|a| {
                let pred: f64 = (0..k).map(|b| cv[a * k + b] * self.coef[b].0).sum();
                let r = design.c[j * k + a] * design.y[j];
                (r - pred) * (r - pred)
            })
            .sum()
    }
}

/// Public-facing variant used by bandwidth selection: fit at `target`,
/// optionally leaving out one observation.
pub fn profiled_wls(
    design: &DesignCache,
    frame: &IndexFrame,
    target: f64,
    family: KernelFamily,
    h: f64,
    exclude: Option<usize>,
) -> Result<LooFit> {
    let mut nb = frame.neighbors(target, family, h);
    if let Some(j) = exclude {
        nb = nb.without(j);
    }
    let fit = ls_fit(design, &nb, target, h, None, family)?;
    Ok(LooFit { inner: fit })
}

/// Leave-one-out capable profiled fit.
pub struct LooFit {
    inner: ProfiledLs,
}

impl LooFit {
    pub fn loo_error(&self, design: &DesignCache, j: usize, _at: f64) -> f64 {
        self.inner.loo_error(design, j)
    }

    pub fn coefficients(&self) -> &[(f64, f64)] {
        &self.inner.coef
    }
}

pub(crate) fn profiled_ls_at(
    design: &DesignCache,
    frame: &IndexFrame,
    j: usize,
    family: KernelFamily,
    h: f64,
    with_gradient: bool,
) -> Result<ProfiledLs> {
    let at = frame.t[j];
    let nb = frame.neighbors(at, family, h);
    ls_fit(design, &nb, at, h, with_gradient.then_some(j), family)
}

/// Weighted least squares of `rᵢₖ = cᵢₖyᵢ` on `Σ_l cov_kl(xᵢ)(a_l + b_l dᵢ)`.
/// With `grad_at = Some(j)` also returns the derivative of the profiled sum
/// of squares with respect to the free index coefficients, holding the
/// profiled coefficients fixed (their first-order conditions make this exact).
fn ls_fit(
    design: &DesignCache,
    nb: &Neighbors,
    at: f64,
    h: f64,
    grad_at: Option<usize>,
    family: KernelFamily,
) -> Result<ProfiledLs> {
    if nb.is_empty() {
        return Err(Error::EmptyNeighborhood {
            target: format!("{at}"),
        });
    }
    let k = design.k;
    let m = 2 * k;
    let total = nb.total();
    let mut g = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut row = vec![0.0; m];
    for ((&i, &w), &d) in nb.idx.iter().zip(&nb.k).zip(&nb.d) {
        let w = w / total;
        let cv = &design.cov[i * k * k..(i + 1) * k * k];
        for a in 0..k {
            for l in 0..k {
                row[2 * l] = cv[a * k + l];
                row[2 * l + 1] = cv[a * k + l] * d / h;
            }
            let r = design.c[i * k + a] * design.y[i];
            for p in 0..m {
                rhs[p] += w * row[p] * r;
                for q in p..m {
                    g[(p, q)] += w * row[p] * row[q];
                }
            }
        }
    }
    for p in 0..m {
        for q in 0..p {
            g[(p, q)] = g[(q, p)];
        }
    }
    let sv = g.singular_values();
    let smax = sv.max();
    let rcond = if smax > 0.0 { sv.min() / smax } else { 0.0 };
    if !(rcond >= crate::local_fit::SYSTEM_RCOND_FLOOR) {
        return Err(Error::SingularSystem { at, rcond });
    }
    let theta = g.lu().solve(&rhs).ok_or(Error::SingularSystem { at, rcond })?;
    let coef: Vec<(f64, f64)> = (0..k).map(|l| (theta[2 * l], theta[2 * l + 1] / h)).collect();

    let q = design.p - 1;
    let mut ss = 0.0;
    let mut gradient = vec![0.0; q];
    // Per neighbor: normalized weight, Σ_a e_a², and Σ_a e_a Σ_l cov_al b_l.
    let mut parts = Vec::with_capacity(nb.idx.len());
    for ((&i, &w), &d) in nb.idx.iter().zip(&nb.k).zip(&nb.d) {
        let wn = w / total;
        let cv = &design.cov[i * k * k..(i + 1) * k * k];
        let (mut e2, mut eb) = (0.0, 0.0);
        for a in 0..k {
            let mut pred = 0.0;
            let mut slope = 0.0;
            for l in 0..k {
                pred += cv[a * k + l] * (coef[l].0 + coef[l].1 * d);
                slope += cv[a * k + l] * coef[l].1;
            }
            let e = design.c[i * k + a] * design.y[i] - pred;
            e2 += e * e;
            eb += e * slope;
        }
        ss += wn * e2;
        parts.push((wn, e2, eb));
    }
    if let Some(j) = grad_at {
        let xj = design.x_lower(j);
        let dk: Vec<f64> = nb.d.iter().map(|&d| family.derivative(d / h) / (h * h)).collect();
        let mut dk_total = vec![0.0; q];
        for (&i, &dki) in nb.idx.iter().zip(&dk) {
            for (r, (xi, xjr)) in design.x_lower(i).iter().zip(xj).enumerate() {
                dk_total[r] += dki * (xi - xjr);
            }
        }
        for ((&i, &dki), &(wn, e2, eb)) in nb.idx.iter().zip(&dk).zip(&parts) {
            for (r, (xi, xjr)) in design.x_lower(i).iter().zip(xj).enumerate() {
                let dd = xi - xjr;
                let dw = (dki * dd - wn * dk_total[r]) / total;
                gradient[r] += dw * e2 - 2.0 * wn * eb * dd;
            }
        }
    }
    Ok(ProfiledLs { coef, ss, gradient })
}

/// Profiled least-squares objective `Σ_j SS_j` at `beta`.
pub(crate) fn ls_objective(design: &DesignCache, config: &KernelConfig, beta: &[f64]) -> Result<f64> {
    let t = index_values(design, beta);
    let frame = IndexFrame::new(&t);
    let parts = per_observation(design.n(), |j| profiled_ls_at(design, &frame, j, config.family, config.h_g, false))?;
    Ok(parts.iter().map(|p| p.ss).sum())
}
