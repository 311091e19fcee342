use super::fit::IndexFit;
use super::pilot::{self, PilotKind};
use super::profile::{evaluate, ls_objective, Equation};
use super::solver::{self, LmOptions, LmOutcome};
use super::{check_beta, IndexParam, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::local_fit::{FStar, FitContext};
use crate::randomization::RandomizationSpec;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

pub type SharedIndexFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SharedVecIndexFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Working models plugged into the estimating equations. Unset members take
/// the defaults `f* = 0`, `g* = 0`, `h* = 1`, `u* = 0`.
#[derive(Clone, Default)]
pub struct WorkingModels {
    pub f_star: FStar,
    pub g_star: Option<SharedIndexFn>,
    pub h_star: Option<SharedIndexFn>,
    pub u_star: Option<SharedVecIndexFn>,
}

impl fmt::Debug for WorkingModels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkingModels")
            .field("f_star", &self.f_star)
            .field("g_star", &self.g_star.as_ref().map(|_| "custom"))
            .field("h_star", &self.h_star.as_ref().map(|_| "custom"))
            .field("u_star", &self.u_star.as_ref().map(|_| "custom"))
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub working: WorkingModels,
    pub max_iter: usize,
    /// Convergence when `‖score‖ ≤ rel_tol·(1 + ‖score(start)‖)`.
    pub rel_tol: f64,
    /// Forward-difference step `fd_step·(1 + |β_k|)`.
    pub fd_step: f64,
    /// Use the supplied initial value as the only start.
    pub warm_only: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            working: WorkingModels::default(),
            max_iter: 100,
            rel_tol: 1e-6,
            fd_step: 1e-5,
            warm_only: false,
        }
    }
}

impl SolveOptions {
    fn lm(&self) -> LmOptions {
        LmOptions {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            fd_step: self.fd_step,
        }
    }
}

/// Origin of the starting value that produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// Minimizer of the profiled least-squares objective.
    LeastSquaresMinimizer,
    Pilot(PilotKind),
    User,
    /// One coordinate of the user start (or of the reference start) moved
    /// by a fixed relative amount.
    Perturbed,
}

/// Relative moves of the perturbed starts, tried nearest first.
const PERTURBATIONS: [f64; 3] = [0.1, 0.25, 0.5];

/// Starts around `center` that move one coordinate at a time.
fn perturbed_starts(center: &[f64]) -> Vec<(StartKind, Vec<f64>)> {
    let mut out = Vec::new();
    for delta in PERTURBATIONS {
        for j in 0..center.len() {
            for sign in [-1.0, 1.0] {
                let mut x = center.to_vec();
                x[j] += sign * delta * (1.0 + center[j].abs());
                out.push((StartKind::Perturbed, x));
            }
        }
    }
    out
}

pub(crate) struct Problem<'a> {
    pub ctx: &'a FitContext,
    pub config: KernelConfig,
    pub method: Method,
    pub working: &'a WorkingModels,
}

impl Problem<'_> {
    pub fn score(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let q = beta.len() - 1;
        let zero = |_: f64| 0.0;
        let one = |_: f64| 1.0;
        let uzero = move |_: f64| vec![0.0; q];
        let eq = match self.method {
            Method::M1 => Equation::Efficient,
            Method::M2 => Equation::WorkingG {
                g: self.working.g_star.as_deref().map_or(&zero as &(dyn Fn(f64) -> f64 + Sync), |f| f),
                h: self.working.h_star.as_deref().map_or(&one as &(dyn Fn(f64) -> f64 + Sync), |f| f),
            },
            Method::M3 => Equation::WorkingU {
                u: self
                    .working
                    .u_star
                    .as_deref()
                    .map_or(&uzero as &(dyn Fn(f64) -> Vec<f64> + Sync), |f| f),
            },
            Method::M4 => Equation::LeastSquares,
            Method::ContEff | Method::CatEff => Equation::MultiEfficient,
        };
        evaluate(self.ctx, &self.config, beta, eq)
    }

    fn run(&self, free: &[f64], lm: LmOptions) -> Result<LmOutcome> {
        let score = |v: &[f64]| self.score(IndexParam::from_free(v).beta());
        if self.method == Method::M4 {
            let n = self.ctx.n() as f64;
            let obj = |v: &[f64]| ls_objective(&self.ctx.design, &self.config, IndexParam::from_free(v).beta()).map(|o| o / n);
            solver::minimize(obj, score, free, lm)
        } else {
            solver::solve(score, free, lm)
        }
    }
}

/// Pilot directions ranked by the least-squares objective; pilots where the
/// objective cannot be evaluated come last. With more than one treatment
/// component the direction search leads.
fn ranked_pilots(ctx: &FitContext, config: &KernelConfig) -> Vec<(PilotKind, Vec<f64>)> {
    let Ok(yt) = pilot::transformed(&ctx.design) else {
        return Vec::new();
    };
    let mut pilots: Vec<(PilotKind, Vec<f64>)> = pilot::least_squares(&ctx.design, &yt)
        .into_iter()
        .map(|b| (PilotKind::LeastSquares, b))
        .collect();
    if let Ok(b) = pilot::outer_gradient(&ctx.design, &yt) {
        pilots.push((PilotKind::OuterGradient, b));
    }
    let mut scored: Vec<(f64, usize, (PilotKind, Vec<f64>))> = pilots
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let obj = ls_objective(&ctx.design, config, &p.1).unwrap_or(f64::INFINITY);
            (if obj.is_nan() { f64::INFINITY } else { obj }, i, p)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ranked: Vec<(PilotKind, Vec<f64>)> = scored.into_iter().map(|s| s.2).collect();
    if ctx.design.k > 1 {
        let extra: Vec<Vec<f64>> = ranked.iter().map(|p| p.1.clone()).collect();
        if let Ok(b) = pilot::direction_search(&ctx.design, &extra) {
            ranked.insert(0, (PilotKind::DirectionSearch, b));
        }
    }
    ranked
}

/// Radius of the root preference around the reference start, relative to
/// the norm of the full coefficient vector.
const ANCHOR_RADIUS: f64 = 0.5;

struct Candidate {
    start: StartKind,
    outcome: LmOutcome,
}

/// Root preference: converged roots within `radius` of `point` win at once;
/// farther roots are kept and the nearest is used if no start lands close.
#[derive(Clone, Copy)]
struct Anchor<'a> {
    point: &'a [f64],
    radius: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs the starts in order and stops at the first that converges (near
/// the anchor, when one is given); otherwise keeps the converged root
/// nearest the anchor, then the smallest final score norm.
fn multi_start(
    problem: &Problem<'_>,
    starts: &[(StartKind, Vec<f64>)],
    lm: LmOptions,
    anchor: Option<Anchor<'_>>,
) -> Result<Candidate> {
    let mut best: Option<Candidate> = None;
    let mut far: Option<(f64, Candidate)> = None;
    let mut first_error = None;
    let mut tried: Vec<&[f64]> = Vec::new();
    for (kind, free) in starts {
        if tried
            .iter()
            .any(|t| t.iter().zip(free).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs())))
        {
            continue;
        }
        tried.push(free);
        match problem.run(free, lm) {
            Ok(outcome) => {
                let candidate = Candidate { start: *kind, outcome };
                if candidate.outcome.converged {
                    let gap = anchor.map_or(0.0, |a| distance(&candidate.outcome.x, a.point));
                    if anchor.is_none_or(|a| gap <= a.radius) {
                        return Ok(candidate);
                    }
                    if far.as_ref().is_none_or(|f| gap < f.0) {
                        far = Some((gap, candidate));
                    }
                } else if best.as_ref().is_none_or(|b| candidate.outcome.norm < b.outcome.norm) {
                    best = Some(candidate);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    far.map(|f| f.1).or(best).ok_or_else(|| {
        first_error.unwrap_or_else(|| Error::DegenerateConfiguration("no usable starting value".into()))
    })
}

/// Fits the index by the chosen method and reports convergence in the
/// returned fit rather than as an error.
pub fn solve_index_with(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    method: Method,
    config: &KernelConfig,
    init: Option<&IndexParam>,
    opts: &SolveOptions,
) -> Result<IndexFit> {
    method.check_kind(spec.kind())?;
    crate::kernel::check_bandwidth(config.h_g)?;
    crate::kernel::check_bandwidth(config.h_u)?;
    check_beta(dataset, &vec![1.0; dataset.p()])?;
    if let Some(b) = init {
        check_beta(dataset, b.beta())?;
    }
    let ctx = Arc::new(FitContext::new(dataset, spec, &opts.working.f_star)?);
    let problem = Problem {
        ctx: &ctx,
        config: *config,
        method,
        working: &opts.working,
    };
    let lm = opts.lm();
    let mut starts: Vec<(StartKind, Vec<f64>)> = Vec::new();
    let mut reference: Option<Vec<f64>> = None;
    if !opts.warm_only {
        let pilots = ranked_pilots(&ctx, config);
        if method == Method::M4 {
            starts.extend(pilots.iter().map(|(k, b)| (StartKind::Pilot(*k), b[1..].to_vec())));
        } else {
            let ls = Problem {
                method: Method::M4,
                ..problem
            };
            let pilot_starts: Vec<(StartKind, Vec<f64>)> =
                pilots.iter().map(|(k, b)| (StartKind::Pilot(*k), b[1..].to_vec())).collect();
            // The fixed-bandwidth least-squares minimizer can drift toward
            // large index scales; the searched pilot goes first when present.
            let searched = pilot_starts.first().filter(|p| p.0 == StartKind::Pilot(PilotKind::DirectionSearch)).cloned();
            starts.extend(searched.clone());
            // Roots of the equation nearest a consistent reference are
            // preferred over distant spurious ones: the searched pilot when
            // present, otherwise the least-squares minimizer.
            reference = searched.as_ref().map(|p| p.1.clone());
            if let Ok(c) = multi_start(&ls, &pilot_starts, lm, None) {
                reference.get_or_insert_with(|| c.outcome.x.clone());
                starts.push((StartKind::LeastSquaresMinimizer, c.outcome.x));
            }
            if searched.is_none() {
                if let Some(first) = pilot_starts.into_iter().next() {
                    starts.push(first);
                }
            }
        }
    }
    if let Some(b) = init {
        starts.push((StartKind::User, b.free().to_vec()));
    }
    if !opts.warm_only {
        // Last resort when the score is flat at every start: nearby points
        // around the user start, else the reference.
        let center = init.map(|b| b.free().to_vec()).or_else(|| reference.clone());
        if let Some(c) = center {
            starts.extend(perturbed_starts(&c));
        }
    }
    if starts.is_empty() {
        return Err(Error::DegenerateConfiguration(
            "no starting value: pilots failed and no initial value was supplied".into(),
        ));
    }
    let anchor = reference.as_deref().map(|point| Anchor {
        point,
        radius: ANCHOR_RADIUS * (1.0 + point.iter().map(|v| v * v).sum::<f64>()).sqrt(),
    });
    let best = multi_start(&problem, &starts, lm, anchor)?;
    Ok(IndexFit::build(
        ctx,
        spec.clone(),
        method,
        *config,
        opts.working.clone(),
        IndexParam::from_free(&best.outcome.x),
        best.outcome.norm,
        best.outcome.tol,
        best.outcome.iterations,
        best.outcome.converged,
        best.start,
    ))
}

/// Fits the index and fails with the best candidate when no start converges.
pub fn solve_index(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    method: Method,
    config: &KernelConfig,
    init: Option<&IndexParam>,
) -> Result<IndexFit> {
    let fit = solve_index_with(dataset, spec, method, config, init, &SolveOptions::default())?;
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergence {
            beta: fit.beta_hat.beta().to_vec(),
            score_norm: fit.score_norm_at_solution,
        })
    }
}

/// [`solve_index_with`] under default options.
pub fn solve_index_best_effort(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    method: Method,
    config: &KernelConfig,
    init: Option<&IndexParam>,
) -> Result<IndexFit> {
    solve_index_with(dataset, spec, method, config, init, &SolveOptions::default())
}

/// Fit with the index held at `beta`; `converged` reports whether the score
/// at `beta` already meets the tolerance `rel_tol`.
pub fn fit_at_beta(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    method: Method,
    config: &KernelConfig,
    beta: &IndexParam,
    opts: &SolveOptions,
) -> Result<IndexFit> {
    method.check_kind(spec.kind())?;
    crate::kernel::check_bandwidth(config.h_g)?;
    crate::kernel::check_bandwidth(config.h_u)?;
    check_beta(dataset, beta.beta())?;
    let ctx = Arc::new(FitContext::new(dataset, spec, &opts.working.f_star)?);
    let problem = Problem {
        ctx: &ctx,
        config: *config,
        method,
        working: &opts.working,
    };
    let norm = problem
        .score(beta.beta())
        .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
        .unwrap_or(f64::INFINITY);
    let tol = opts.rel_tol;
    Ok(IndexFit::build(
        ctx,
        spec.clone(),
        method,
        *config,
        opts.working.clone(),
        beta.clone(),
        norm,
        tol,
        0,
        norm <= tol,
        StartKind::User,
    ))
}
