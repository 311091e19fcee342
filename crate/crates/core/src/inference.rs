//! Resampling inference for the index and the effect curve, and a Monte
//! Carlo evaluator of the asymptotic sandwich variance under a known truth.

use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{fit_at_beta, solve_index_best_effort, solve_index_with, IndexFit, Method, SolveOptions};
use crate::kernel::{IndexFrame, KernelConfig, KernelFamily};
use crate::local_fit::FStar;
use crate::randomization::{RandomizationSpec, TreatmentKind};
use crate::simlab::{task_seed, ScenarioId};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Largest tolerated fraction of failed resamples.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Attempts allowed per requested draw.
const ATTEMPT_FACTOR: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub b: usize,
    /// `B` rows of the free coordinates `β₂..β_p`.
    pub beta_draws: Vec<Vec<f64>>,
    pub ci_per_coord: Vec<(f64, f64)>,
    pub level: f64,
    pub attempts: usize,
    pub failed: usize,
    pub seed: u64,
}

impl BootstrapResult {
    /// Standard deviation of the draws per coordinate.
    pub fn draw_sd(&self) -> Vec<f64> {
        let q = self.ci_per_coord.len();
        let n = self.beta_draws.len() as f64;
        (0..q)
            .map(|c| {
                let m = self.beta_draws.iter().map(|d| d[c]).sum::<f64>() / n;
                let ss: f64 = self.beta_draws.iter().map(|d| (d[c] - m).powi(2)).sum();
                if n > 1.0 {
                    (ss / (n - 1.0)).sqrt()
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Order statistic `x_(⌈qm⌉)` of `m` sorted values.
pub fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = ((q * m as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(m) - 1]
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level {level} must lie in (0, 1)")));
    }
    Ok(())
}

fn resample_rows(n: usize, seed: u64, attempt: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, attempt as u64));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Refits on resamples until `b` converged fits are collected or the attempt
/// cap is reached. Returns per-fit outputs in attempt order.
fn resample_fits<T: Send>(
    dataset: &Dataset,
    fit: &IndexFit,
    b: usize,
    seed: u64,
    extract: impl Fn(&IndexFit) -> T + Sync,
) -> Result<(Vec<T>, usize)> {
    let n = dataset.n();
    let opts = SolveOptions {
        working: fit.working().clone(),
        warm_only: true,
        ..SolveOptions::default()
    };
    let cold = SolveOptions {
        warm_only: false,
        ..opts.clone()
    };
    let cap = ATTEMPT_FACTOR * b;
    let mut out: Vec<T> = Vec::with_capacity(b);
    let mut attempts = 0;
    while out.len() < b && attempts < cap {
        let batch = (b - out.len()).min(cap - attempts);
        let results: Vec<Option<T>> = (attempts..attempts + batch)
            .into_par_iter()
            .map(|a| {
                let data = dataset.select(&resample_rows(n, seed, a));
                let mut refit = solve_index_with(&data, fit.spec(), fit.method, &fit.config, Some(&fit.beta_hat), &opts);
                // A stalled warm start falls back to the full start set.
                if !matches!(&refit, Ok(r) if r.converged) {
                    refit = solve_index_with(&data, fit.spec(), fit.method, &fit.config, Some(&fit.beta_hat), &cold);
                }
                match refit {
                    Ok(r) if r.converged => Some(extract(&r)),
                    _ => None,
                }
            })
            .collect();
        attempts += batch;
        out.extend(results.into_iter().flatten());
    }
    let failed = attempts - out.len();
    if out.len() < b || failed as f64 > MAX_FAILURE_RATE * attempts as f64 {
        return Err(Error::InferenceUnstable {
            failed,
            attempts,
            rate: failed as f64 / attempts as f64,
        });
    }
    Ok((out, attempts))
}

/// Fits the index and bootstraps it.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_beta(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    method: Method,
    config: &KernelConfig,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    let fit = solve_index_best_effort(dataset, spec, method, config, None)?;
    bootstrap_from_fit(dataset, &fit, b, level, seed)
}

/// Percentile bootstrap of the free index coordinates. Each resample is
/// warm-started at the full-data estimate with the full-data bandwidths.
pub fn bootstrap_from_fit(dataset: &Dataset, fit: &IndexFit, b: usize, level: f64, seed: u64) -> Result<BootstrapResult> {
    if b < 20 {
        return Err(Error::Config(format!("bootstrap needs B ≥ 20, got {b}")));
    }
    check_level(level)?;
    let (draws, attempts) = resample_fits(dataset, fit, b, seed, |r| r.beta_hat.free().to_vec())?;
    let q = fit.beta_hat.p() - 1;
    let alpha = 1.0 - level;
    let ci = (0..q)
        .map(|c| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            col.sort_by(f64::total_cmp);
            (order_statistic(&col, alpha / 2.0), order_statistic(&col, 1.0 - alpha / 2.0))
        })
        .collect();
    Ok(BootstrapResult {
        b,
        failed: attempts - draws.len(),
        beta_draws: draws,
        ci_per_coord: ci,
        level,
        attempts,
        seed,
    })
}

/// Pointwise curve summaries indexed `[component][grid point]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub grid: Vec<f64>,
    pub estimate: Vec<Vec<Option<f64>>>,
    pub lower: Vec<Vec<Option<f64>>>,
    pub median: Vec<Vec<Option<f64>>>,
    pub upper: Vec<Vec<Option<f64>>>,
    pub b: usize,
    pub level: f64,
    /// Grid points missing from at least one resample.
    pub flagged: Vec<usize>,
}

fn by_component(curve: &[Option<Vec<f64>>], k: usize) -> Vec<Vec<Option<f64>>> {
    (0..k).map(|a| curve.iter().map(|v| v.as_ref().map(|g| g[a])).collect()).collect()
}

fn flagged_points(curves: &[Vec<Option<Vec<f64>>>], len: usize) -> Vec<usize> {
    (0..len).filter(|&i| curves.iter().any(|c| c[i].is_none())).collect()
}

/// Pointwise quantile of the available values at each grid point.
fn pointwise(curves: &[Vec<Option<Vec<f64>>>], k: usize, len: usize, q: f64) -> Vec<Vec<Option<f64>>> {
    (0..k)
        .map(|a| {
            (0..len)
                .map(|i| {
                    let mut v: Vec<f64> = curves.iter().filter_map(|c| c[i].as_ref().map(|g| g[a])).collect();
                    if v.is_empty() {
                        return None;
                    }
                    v.sort_by(f64::total_cmp);
                    Some(order_statistic(&v, q))
                })
                .collect()
        })
        .collect()
}

/// Bootstrap pointwise percentile band for the effect curve, refitting the
/// index on each resample.
pub fn bootstrap_curve(
    dataset: &Dataset,
    fit: &IndexFit,
    grid: &[f64],
    b: usize,
    level: f64,
    seed: u64,
) -> Result<CurveBand> {
    if b < 20 {
        return Err(Error::Config(format!("bootstrap needs B ≥ 20, got {b}")));
    }
    check_level(level)?;
    let (curves, _) = resample_fits(dataset, fit, b, seed, |r| r.g_curve(grid))?;
    let k = fit.k();
    let alpha = 1.0 - level;
    Ok(CurveBand {
        grid: grid.to_vec(),
        estimate: by_component(&fit.g_curve(grid), k),
        lower: pointwise(&curves, k, grid.len(), alpha / 2.0),
        median: pointwise(&curves, k, grid.len(), 0.5),
        upper: pointwise(&curves, k, grid.len(), 1.0 - alpha / 2.0),
        b,
        level,
        flagged: flagged_points(&curves, grid.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationBand {
    pub grid: Vec<f64>,
    /// Pointwise level-quantile of the permuted curves, `[component][grid]`.
    pub upper_quantile_curve: Vec<Vec<Option<f64>>>,
    /// Curve fitted on the observed data.
    pub estimate: Vec<Vec<Option<f64>>>,
    pub n_perm: usize,
    pub level: f64,
    pub hold_beta: bool,
    /// Grid points where some permuted fit had an empty or singular window.
    pub flagged: Vec<usize>,
    /// Permutations whose refit raised an error.
    pub failed_refits: usize,
}

impl PermutationBand {
    /// Per component, the fraction of grid points with both values defined
    /// where the observed curve exceeds the band.
    pub fn exceedance(&self) -> Vec<f64> {
        self.estimate
            .iter()
            .zip(&self.upper_quantile_curve)
            .map(|(est, up)| {
                let pairs: Vec<(f64, f64)> = est.iter().zip(up).filter_map(|(e, u)| Some(((*e)?, (*u)?))).collect();
                if pairs.is_empty() {
                    return 0.0;
                }
                pairs.iter().filter(|(e, u)| e > u).count() as f64 / pairs.len() as f64
            })
            .collect()
    }
}

/// Permutation band re-estimating the index on every permuted dataset.
pub fn permutation_band_g(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    fit: &IndexFit,
    grid: &[f64],
    n_perm: usize,
    level: f64,
    seed: u64,
) -> Result<PermutationBand> {
    permutation_band_with(dataset, spec, fit, grid, n_perm, level, seed, false)
}

/// Permutation band; with `hold_beta` the index stays at the observed
/// estimate and only the curve is refitted.
#[allow(clippy::too_many_arguments)]
pub fn permutation_band_with(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    fit: &IndexFit,
    grid: &[f64],
    n_perm: usize,
    level: f64,
    seed: u64,
    hold_beta: bool,
) -> Result<PermutationBand> {
    check_level(level)?;
    if (n_perm as f64) * (1.0 - level) < 5.0 - 1e-9 {
        return Err(Error::Config(format!(
            "{n_perm} permutations are too few for level {level}; need n_perm·(1 - level) ≥ 5"
        )));
    }
    let opts = SolveOptions {
        working: fit.working().clone(),
        warm_only: true,
        ..SolveOptions::default()
    };
    let curves: Vec<Option<Vec<Option<Vec<f64>>>>> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, r as u64));
            let mut z = dataset.z().to_vec();
            z.shuffle(&mut rng);
            let data = dataset.with_treatment(z).ok()?;
            let refit = if hold_beta {
                fit_at_beta(&data, spec, fit.method, &fit.config, &fit.beta_hat, &opts)
            } else {
                solve_index_with(&data, spec, fit.method, &fit.config, Some(&fit.beta_hat), &opts)
            };
            refit.ok().map(|f| f.g_curve(grid))
        })
        .collect();
    let failed_refits = curves.iter().filter(|c| c.is_none()).count();
    let curves: Vec<Vec<Option<Vec<f64>>>> = curves.into_iter().flatten().collect();
    if curves.is_empty() {
        return Err(Error::InferenceUnstable {
            failed: failed_refits,
            attempts: n_perm,
            rate: 1.0,
        });
    }
    let k = fit.k();
    Ok(PermutationBand {
        grid: grid.to_vec(),
        upper_quantile_curve: pointwise(&curves, k, grid.len(), level),
        estimate: by_component(&fit.g_curve(grid), k),
        n_perm,
        level,
        hold_beta,
        flagged: flagged_points(&curves, grid.len()),
        failed_refits,
    })
}

/// `m` equally spaced points between the `lo` and `hi` quantiles of `t`.
pub fn quantile_grid(t: &[f64], lo: f64, hi: f64, m: usize) -> Result<Vec<f64>> {
    if t.is_empty() || m < 2 || !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
        return Err(Error::Config("grid needs data, m ≥ 2 and 0 ≤ lo < hi ≤ 1".into()));
    }
    let mut s = t.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < s.len() {
            s[i] + frac * (s[i + 1] - s[i])
        } else {
            s[i]
        }
    };
    let (a, b) = (q(lo), q(hi));
    Ok((0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect())
}

pub type CovariateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type CovariateSampler = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

/// Known truth of a binary-treatment model.
#[derive(Clone)]
pub struct BinaryTruth {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub f: CovariateFn,
    pub g: ScalarFn,
    pub g_prime: ScalarFn,
    pub draw_x: CovariateSampler,
}

impl BinaryTruth {
    pub fn from_scenario(id: ScenarioId) -> Result<Self> {
        let truth = id.truth();
        if truth.spec.kind() != TreatmentKind::Binary {
            return Err(Error::UnsupportedKind {
                kind: truth.spec.kind().name().into(),
                detail: "the sandwich oracle covers binary designs".into(),
            });
        }
        Ok(BinaryTruth {
            beta: truth.beta,
            sigma: truth.sigma,
            f: Arc::new(move |x| id.f(x)),
            g: Arc::new(move |t| id.g(t)[0]),
            g_prime: Arc::new(move |t| id.g_prime(t)[0]),
            draw_x: Arc::new(move |rng| id.draw_x(rng)),
        })
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

/// Which estimating equation the sandwich describes.
#[derive(Clone, Default)]
pub enum SandwichVariant {
    /// Estimated `g`, `g'` and `u`.
    #[default]
    Efficient,
    /// Working `g*`, `h*` with estimated `u`.
    WorkingG { g_star: ScalarFn, h_star: ScalarFn },
    /// Estimated `g`, `g'` with working `u*`.
    WorkingU { u_star: VectorFn },
}

/// `A`, `B` and `A⁻¹BA⁻ᵀ`, all row-major `q × q` with `q = p - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichOracle {
    pub q: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub avar: Vec<f64>,
    /// Monte Carlo standard errors of the entries of `B`.
    pub b_se: Vec<f64>,
}

impl SandwichOracle {
    /// Standard deviation of coordinate `c` of `β̂_L` at sample size `n`.
    pub fn sd_at(&self, c: usize, n: usize) -> f64 {
        (self.avar[c * self.q + c] / n as f64).sqrt()
    }
}

/// Auxiliary draws used for `u(t) = E{var(Z|X) X_L | t} / E{var(Z|X) | t}`.
const U_SAMPLE: usize = 50_000;
const U_GRID: usize = 801;

/// Kernel regression of `u` on a grid, linearly interpolated.
struct UCurve {
    lo: f64,
    step: f64,
    values: Vec<Vec<f64>>,
}

impl UCurve {
    fn fit(beta: &[f64], aux: &[(Vec<f64>, f64)]) -> Result<Self> {
        let t: Vec<f64> = aux.iter().map(|(x, _)| dot(beta, x)).collect();
        let q = beta.len() - 1;
        let sd = crate::kernel::sample_sd(&t);
        let h = sd * (t.len() as f64).powf(-0.2);
        let frame = IndexFrame::new(&t);
        let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / (U_GRID - 1) as f64;
        let mut values: Vec<Option<Vec<f64>>> = (0..U_GRID)
            .map(|g| {
                let at = lo + step * g as f64;
                let nb = frame.neighbors(at, KernelFamily::Quartic, h);
                let mut num = vec![0.0; q];
                let mut den = 0.0;
                for (&i, &k) in nb.idx.iter().zip(&nb.k) {
                    let (x, var) = &aux[i];
                    den += k * var;
                    for a in 0..q {
                        num[a] += k * var * x[a + 1];
                    }
                }
                (den > 0.0).then(|| num.iter().map(|v| v / den).collect())
            })
            .collect();
        // Empty tail windows copy their nearest defined neighbour.
        let first = values.iter().position(|v| v.is_some()).ok_or(Error::DegenerateIndex)?;
        for g in 0..U_GRID {
            if values[g].is_none() {
                let src = if g < first { first } else { g - 1 };
                values[g] = values[src].clone();
            }
        }
        Ok(UCurve {
            lo,
            step,
            values: values.into_iter().map(|v| v.unwrap()).collect(),
        })
    }

    fn at(&self, t: f64) -> Vec<f64> {
        let pos = ((t - self.lo) / self.step).clamp(0.0, (U_GRID - 1) as f64);
        let i = (pos.floor() as usize).min(U_GRID - 2);
        let w = pos - i as f64;
        self.values[i].iter().zip(&self.values[i + 1]).map(|(a, b)| a + w * (b - a)).collect()
    }
}

fn outer_add(acc: &mut [f64], u: &[f64], v: &[f64], scale: f64) {
    let q = u.len();
    for a in 0..q {
        for b in 0..q {
            acc[a * q + b] += scale * u[a] * v[b];
        }
    }
}

/// Sandwich variance of the locally efficient estimator.
pub fn sandwich_oracle_binary(
    truth: &BinaryTruth,
    spec: &RandomizationSpec,
    mc_draws: usize,
    f_star: &FStar,
    seed: u64,
) -> Result<SandwichOracle> {
    sandwich_oracle_with(truth, spec, mc_draws, f_star, &SandwichVariant::Efficient, seed)
}

/// Monte Carlo sandwich `A⁻¹BA⁻ᵀ` for the chosen estimating equation.
///
/// `B` is the second moment of the influence term
/// `[R(z - E(Z|x)) - var(Z|x){g - g*}(t)]·h(t)·{x_L - u(t)}` with
/// `R = y - f*(x) - z g*(t)`; the `var·{g - g*}` correction accounts for
/// estimating `u`, and vanishes when `g` itself is estimated. Treatments and
/// errors are simulated, so `B` carries Monte Carlo error reported in
/// `b_se`. `A` is evaluated in closed form except for the working-`g`
/// variant, where it is the numerical derivative of the population
/// estimating function.
pub fn sandwich_oracle_with(
    truth: &BinaryTruth,
    spec: &RandomizationSpec,
    mc_draws: usize,
    f_star: &FStar,
    variant: &SandwichVariant,
    seed: u64,
) -> Result<SandwichOracle> {
    if spec.kind() != TreatmentKind::Binary {
        return Err(Error::UnsupportedKind {
            kind: spec.kind().name().into(),
            detail: "the sandwich oracle covers binary designs".into(),
        });
    }
    if mc_draws < 10_000 {
        return Err(Error::Config(format!("sandwich oracle needs at least 10⁴ draws, got {mc_draws}")));
    }
    let p = truth.beta.len();
    let q = p - 1;
    let mut aux_rng = ChaCha8Rng::seed_from_u64(task_seed(seed, 0));
    let aux: Vec<(Vec<f64>, f64)> = (0..U_SAMPLE)
        .map(|_| {
            let x = (truth.draw_x)(&mut aux_rng);
            let v = spec.var_given_x(&x)?;
            Ok((x, v))
        })
        .collect::<Result<_>>()?;
    let u = UCurve::fit(&truth.beta, &aux)?;

    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, 1));
    let mut a = vec![0.0; q * q];
    let mut b_sum = vec![0.0; q * q];
    let mut b_sq = vec![0.0; q * q];
    let mut draws_x = Vec::with_capacity(mc_draws);
    for _ in 0..mc_draws {
        let x = (truth.draw_x)(&mut rng);
        let t = dot(&truth.beta, &x);
        let (mean, cov) = spec.moments(&x)?;
        let (e, var) = (mean[0], cov[0]);
        let z = if rng.random::<f64>() < e { 1.0 } else { 0.0 };
        let eps: f64 = truth.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let xl = &x[1..];
        let ut = u.at(t);
        let r: Vec<f64> = xl.iter().zip(&ut).map(|(a, b)| a - b).collect();
        let g = (truth.g)(t);
        let gp = (truth.g_prime)(t);
        let base = eps + (truth.f)(&x) - f_star.eval(&x);
        let phi_scale = match variant {
            SandwichVariant::Efficient | SandwichVariant::WorkingU { .. } => base * (z - e) * gp,
            SandwichVariant::WorkingG { g_star, h_star } => {
                let gs = g_star(t);
                let resid = base + z * (g - gs);
                (resid * (z - e) - var * (g - gs)) * h_star(t)
            }
        };
        for i in 0..q {
            for j in 0..q {
                let v = phi_scale * phi_scale * r[i] * r[j];
                b_sum[i * q + j] += v;
                b_sq[i * q + j] += v * v;
            }
        }
        match variant {
            SandwichVariant::Efficient => outer_add(&mut a, &r, &r, var * gp * gp),
            SandwichVariant::WorkingU { u_star } => {
                let us = u_star(t);
                let rs: Vec<f64> = xl.iter().zip(&us).map(|(a, b)| a - b).collect();
                outer_add(&mut a, &rs, xl, var * gp * gp);
            }
            SandwichVariant::WorkingG { .. } => {}
        }
        draws_x.push((x, var));
    }
    let m = mc_draws as f64;
    let b: Vec<f64> = b_sum.iter().map(|v| v / m).collect();
    let b_se: Vec<f64> = b_sq
        .iter()
        .zip(&b)
        .map(|(s2, mean)| ((s2 / m - mean * mean).max(0.0) / m).sqrt())
        .collect();
    if let SandwichVariant::WorkingG { g_star, h_star } = variant {
        a = working_g_jacobian(truth, &draws_x, &aux, g_star, h_star)?;
    } else {
        a.iter_mut().for_each(|v| *v /= m);
    }

    let am = DMatrix::from_row_slice(q, q, &a);
    let bm = DMatrix::from_row_slice(q, q, &b);
    let inv = am.clone().try_inverse().ok_or(Error::SingularSystem {
        at: f64::NAN,
        rcond: 0.0,
    })?;
    let avar = &inv * bm * inv.transpose();
    Ok(SandwichOracle {
        q,
        a,
        b,
        avar: avar.transpose().as_slice().to_vec(),
        b_se,
    })
}

/// `-∂Ψ/∂β_L` with `Ψ(β) = E[var(Z|X){g(β₀ᵀX) - g*(βᵀX)} h*(βᵀX){X_L - u_β(βᵀX)}]`,
/// by central differences on common draws.
fn working_g_jacobian(
    truth: &BinaryTruth,
    draws: &[(Vec<f64>, f64)],
    aux: &[(Vec<f64>, f64)],
    g_star: &ScalarFn,
    h_star: &ScalarFn,
) -> Result<Vec<f64>> {
    let p = truth.beta.len();
    let q = p - 1;
    let psi = |beta: &[f64]| -> Result<Vec<f64>> {
        let u = UCurve::fit(beta, aux)?;
        let mut acc = vec![0.0; q];
        for (x, var) in draws {
            let t0 = dot(&truth.beta, x);
            let t = dot(beta, x);
            let ut = u.at(t);
            let w = var * ((truth.g)(t0) - g_star(t)) * h_star(t);
            for a in 0..q {
                acc[a] += w * (x[a + 1] - ut[a]);
            }
        }
        Ok(acc.into_iter().map(|v| v / draws.len() as f64).collect())
    };
    let step = 1e-3;
    let mut a = vec![0.0; q * q];
    for c in 0..q {
        let mut up = truth.beta.clone();
        let mut dn = truth.beta.clone();
        up[c + 1] += step;
        dn[c + 1] -= step;
        let (pu, pd) = (psi(&up)?, psi(&dn)?);
        for r in 0..q {
            a[r * q + c] = -(pu[r] - pd[r]) / (2.0 * step);
        }
    }
    Ok(a)
}
