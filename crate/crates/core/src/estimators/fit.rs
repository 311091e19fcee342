use super::profile::{per_observation, profiled_wls};
use super::solve::{StartKind, WorkingModels};
use super::{IndexParam, Method};
use crate::data::dot;
use crate::error::{Error, Result};
use crate::kernel::{IndexFrame, KernelConfig};
use crate::local_fit::{binary_fit_core, local_constant_core, multi_fit_core, FitContext};
use crate::randomization::RandomizationSpec;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A fitted index with the data needed to evaluate the effect curve.
#[derive(Debug, Clone)]
pub struct IndexFit {
    pub beta_hat: IndexParam,
    pub method: Method,
    pub score_norm_at_solution: f64,
    pub tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub start: StartKind,
    pub config: KernelConfig,
    pub(crate) working: WorkingModels,
    ctx: Arc<FitContext>,
    spec: RandomizationSpec,
    frame: IndexFrame,
    fitted: Vec<Option<Vec<f64>>>,
}

/// Serializable digest of an [`IndexFit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexFitSummary {
    pub beta: Vec<f64>,
    pub method: Method,
    pub score_norm: f64,
    pub tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub start: StartKind,
    pub kernel: KernelConfig,
}

impl IndexFit {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        ctx: Arc<FitContext>,
        spec: RandomizationSpec,
        method: Method,
        config: KernelConfig,
        working: WorkingModels,
        beta_hat: IndexParam,
        score_norm: f64,
        tolerance: f64,
        iterations: usize,
        converged: bool,
        start: StartKind,
    ) -> Self {
        let t: Vec<f64> = (0..ctx.n()).map(|i| dot(ctx.design.row(i), beta_hat.beta())).collect();
        let frame = IndexFrame::new(&t);
        let mut fit = IndexFit {
            beta_hat,
            method,
            score_norm_at_solution: score_norm,
            tolerance,
            iterations,
            converged,
            start,
            config,
            working,
            ctx,
            spec,
            frame,
            fitted: Vec::new(),
        };
        let values = per_observation(t.len(), |i| Ok(fit.g_at(t[i]).ok())).unwrap_or_default();
        fit.fitted = values;
        fit
    }

    /// Number of effect functions (1 for binary treatment).
    pub fn k(&self) -> usize {
        self.ctx.design.k
    }

    /// Working models used by the estimating equation.
    pub fn working(&self) -> &WorkingModels {
        &self.working
    }

    pub fn spec(&self) -> &RandomizationSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }

    /// `β̂ᵀxᵢ` for the training observations.
    pub fn index_values(&self) -> &[f64] {
        &self.frame.t
    }

    /// Effect-curve values at the training observations, `None` where the
    /// local fit failed.
    pub fn fitted(&self) -> &[Option<Vec<f64>>] {
        &self.fitted
    }

    /// Estimated effect function(s) at index value `t`.
    pub fn g_at(&self, t: f64) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let nb = self.frame.neighbors(t, cfg.family, cfg.h_g);
        match self.method {
            Method::M1 | Method::M3 => Ok(vec![binary_fit_core(&self.ctx, &nb, t)?.alpha_c]),
            Method::M2 => Ok(vec![local_constant_core(&self.ctx, &nb, t)?]),
            Method::M4 => {
                let fit = profiled_wls(&self.ctx.design, &self.frame, t, cfg.family, cfg.h_g, None)?;
                Ok(fit.coefficients().iter().map(|c| c.0).collect())
            }
            Method::ContEff | Method::CatEff => Ok(multi_fit_core(&self.ctx, &nb, t, cfg.h_g)?.levels()),
        }
    }

    /// Effect curve on a grid; failed points are `None`.
    pub fn g_curve(&self, grid: &[f64]) -> Vec<Option<Vec<f64>>> {
        per_observation(grid.len(), |i| Ok(self.g_at(grid[i]).ok())).unwrap_or_default()
    }

    pub fn summary(&self) -> IndexFitSummary {
        IndexFitSummary {
            beta: self.beta_hat.beta().to_vec(),
            method: self.method,
            score_norm: self.score_norm_at_solution,
            tolerance: self.tolerance,
            iterations: self.iterations,
            converged: self.converged,
            start: self.start,
            kernel: self.config,
        }
    }
}

/// Effect function(s) at `β̂ᵀx`.
pub fn predict_g(fit: &IndexFit, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != fit.beta_hat.p() {
        return Err(Error::DimensionMismatch {
            expected: fit.beta_hat.p(),
            got: x.len(),
        });
    }
    fit.g_at(dot(fit.beta_hat.beta(), x))
}
