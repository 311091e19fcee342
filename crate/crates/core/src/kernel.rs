//! Kernel functions, neighbor weights and bandwidth selection.
//!
//! All kernels are second-order, symmetric and integrate to one. The compact
//! kernels vanish outside `|u| ≤ 1`; the Gaussian kernel has unbounded support,
//! which removes empty-neighborhood failures in sparse regions.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::randomization::{DesignCache, RandomizationSpec};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;

/// Window radius (in bandwidth units) used for the Gaussian kernel in the
/// windowed fast paths. `φ(8)/φ(0) ≈ 1.3e-14`.
const GAUSSIAN_WINDOW: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Epanechnikov,
    Gaussian,
    Quartic,
}

impl KernelFamily {
    #[inline]
    pub fn value(self, u: f64) -> f64 {
        match self {
            KernelFamily::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            KernelFamily::Quartic => {
                if u.abs() < 1.0 {
                    let s = 1.0 - u * u;
                    15.0 / 16.0 * s * s
                } else {
                    0.0
                }
            }
        }
    }

    /// `K'(u)`; zero outside the support of compact kernels.
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            KernelFamily::Epanechnikov => {
                if u.abs() < 1.0 {
                    -1.5 * u
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => -u * self.value(u),
            KernelFamily::Quartic => {
                if u.abs() < 1.0 {
                    -3.75 * u * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `C₂ = ∫u²K(u)du`.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelFamily::Epanechnikov => 0.2,
            KernelFamily::Gaussian => 1.0,
            KernelFamily::Quartic => 1.0 / 7.0,
        }
    }

    /// Half-width of the support in bandwidth units, `None` if unbounded.
    pub fn support(self) -> Option<f64> {
        match self {
            KernelFamily::Gaussian => None,
            _ => Some(1.0),
        }
    }

    fn window_radius(self) -> f64 {
        self.support().unwrap_or(GAUSSIAN_WINDOW)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Quartic => "quartic",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            "gaussian" | "normal" => Ok(KernelFamily::Gaussian),
            "quartic" | "biweight" => Ok(KernelFamily::Quartic),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

pub fn kernel_value(family: KernelFamily, u: f64) -> f64 {
    family.value(u)
}

/// `K_h(u) = h⁻¹K(u/h)`.
pub fn scaled_kernel(family: KernelFamily, u: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    Ok(family.value(u / h) / h)
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h))
    }
}

/// Trimming threshold per treatment component used by the simulation and
/// command-line defaults; a `K`-component fit trims at `K·DEFAULT_TRIM`.
pub const DEFAULT_TRIM: f64 = 5.0;

/// Kernel family with the two smoothing scales: `h_g` for local fits of the
/// treatment-effect curve, `h_u` for the kernel regressions of covariates and
/// conditional moments on the index.
///
/// `trim` is the effective neighbor count below which an observation's term
/// is dropped from the estimating equations; 0 keeps every observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub h_g: f64,
    pub h_u: f64,
    #[serde(default)]
    pub trim: f64,
}

impl KernelConfig {
    pub fn new(family: KernelFamily, h_g: f64, h_u: f64) -> Result<Self> {
        check_bandwidth(h_g)?;
        check_bandwidth(h_u)?;
        Ok(KernelConfig { family, h_g, h_u, trim: 0.0 })
    }

    pub fn with_trim(mut self, trim: f64) -> Result<Self> {
        if !(trim.is_finite() && trim >= 0.0) {
            return Err(Error::Config(format!("trim must be finite and nonnegative, got {trim}")));
        }
        self.trim = trim;
        Ok(self)
    }

    /// Weight of an observation's estimating-equation term given its `h_g`
    /// neighborhood: 0 below `trim/2` effective neighbors, 1 above `trim`,
    /// smoothstep in between. Continuous in the index for smooth kernels.
    pub fn trim_weight(&self, nb: &Neighbors) -> f64 {
        self.trim_weight_with(nb, |_| 1.0)
    }

    /// As [`KernelConfig::trim_weight`] with neighbor `i` counted
    /// `share(i)` times.
    pub fn trim_weight_with(&self, nb: &Neighbors, share: impl Fn(usize) -> f64) -> f64 {
        if self.trim <= 0.0 {
            return 1.0;
        }
        let mass: f64 = nb.idx.iter().zip(&nb.k).map(|(&i, &k)| k * share(i)).sum();
        let n_eff = mass * self.h_g / self.family.value(0.0);
        let s = ((n_eff - 0.5 * self.trim) / (0.5 * self.trim)).clamp(0.0, 1.0);
        s * s * (3.0 - 2.0 * s)
    }

    /// One bandwidth for both roles.
    pub fn single(family: KernelFamily, h: f64) -> Result<Self> {
        Self::new(family, h, h)
    }

    /// Checks the bandwidth rate conditions for sample size `n`.
    ///
    /// Each bandwidth is read as `h = scale · n^(-a)` where `scale` is the
    /// spread of the index; the implied exponents must satisfy
    /// `a_g + a_u > 1/4`, `a_g, a_u > 1/8`, `a_g + a_u < 1` and
    /// `a_g, a_u < 1/2`.
    pub fn rate_check(&self, n: usize, scale: f64) -> RateCheck {
        let ln_n = (n.max(2) as f64).ln();
        let a_g = (scale / self.h_g).ln() / ln_n;
        let a_u = (scale / self.h_u).ln() / ln_n;
        let mut violations = Vec::new();
        if a_g + a_u <= 0.25 {
            violations.push("n·h_g⁴·h_u⁴ does not vanish (undersmoothing needed)".to_string());
        }
        if a_g <= 0.125 {
            violations.push("n·h_g⁸ does not vanish (h_g too large)".to_string());
        }
        if a_u <= 0.125 {
            violations.push("n·h_u⁸ does not vanish (h_u too large)".to_string());
        }
        if a_g + a_u >= 1.0 {
            violations.push("n·h_g·h_u does not diverge (bandwidths too small)".to_string());
        }
        if a_g >= 0.5 {
            violations.push("n·h_g² does not diverge (h_g too small)".to_string());
        }
        if a_u >= 0.5 {
            violations.push("n·h_u² does not diverge (h_u too small)".to_string());
        }
        RateCheck {
            exponent_g: a_g,
            exponent_u: a_u,
            violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub exponent_g: f64,
    pub exponent_u: f64,
    pub violations: Vec<String>,
}

impl RateCheck {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Normalized kernel weights of every observation around `target`, using
/// the `h_g` bandwidth of `config`.
pub fn neighbor_weights(index_values: &[f64], target: f64, config: &KernelConfig) -> Result<Vec<f64>> {
    kernel_weights(index_values, target, config.family, config.h_g)
}

pub fn kernel_weights(index_values: &[f64], target: f64, family: KernelFamily, h: f64) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    let mut w: Vec<f64> = index_values
        .iter()
        .map(|&t| family.value((t - target) / h) / h)
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyNeighborhood {
            target: format!("{target}"),
        });
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRole {
    GFit,
    UFit,
}

/// Rule-of-thumb bandwidth `c · sd(index) · n^(-1/5)` with `c = 1`.
pub fn default_bandwidth(index_values: &[f64], n: usize, role: BandwidthRole) -> Result<f64> {
    rule_of_thumb(index_values, n, role, 1.0)
}

/// Rule-of-thumb bandwidth with an explicit constant. Both roles share the
/// same rule.
pub fn rule_of_thumb(index_values: &[f64], n: usize, _role: BandwidthRole, constant: f64) -> Result<f64> {
    if n < 2 || index_values.len() < 2 {
        return Err(Error::DegenerateIndex);
    }
    if !(constant.is_finite() && constant > 0.0) {
        return Err(Error::Config(format!("bandwidth constant {constant} must be positive")));
    }
    let sd = sample_sd(index_values);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateIndex);
    }
    Ok(constant * sd * (n as f64).powf(-0.2))
}

pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|t| (t - mean) * (t - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Leave-one-out bandwidth selection for the transformed-response local fit.
///
/// For each candidate `h`, observation `j` is predicted from the local linear
/// weighted least-squares fit of `{z-E(Z|x)}y` on `var(Z|x)·(1, βᵀ(x-x_j))`
/// computed without `j`. The candidate with the smallest summed squared error
/// wins; near-ties go to the larger bandwidth. Candidates for which some fit
/// is empty or singular are skipped.
pub fn loo_cv_bandwidth(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    beta: &[f64],
    family: KernelFamily,
    candidate_grid: &[f64],
) -> Result<f64> {
    if candidate_grid.is_empty() {
        return Err(Error::Config("bandwidth grid is empty".into()));
    }
    if dataset.n() < 3 {
        return Err(Error::Config("leave-one-out selection needs n ≥ 3".into()));
    }
    for &h in candidate_grid {
        check_bandwidth(h)?;
    }
    let design = DesignCache::new(dataset, spec)?;
    let t = dataset.index_values(beta);
    let frame = IndexFrame::new(&t);
    let mut best: Option<(f64, f64)> = None;
    let mut failing = Vec::new();
    for &h in candidate_grid {
        match loo_error(&design, &frame, family, h) {
            Ok(err) => {
                best = match best {
                    None => Some((h, err)),
                    Some((bh, be)) => {
                        let tie = (err - be).abs() <= 1e-12 * (1.0 + be.abs().max(err.abs()));
                        if (tie && h > bh) || (!tie && err < be) {
                            Some((h, err))
                        } else {
                            Some((bh, be))
                        }
                    }
                }
            }
            Err(_) => failing.push(h),
        }
    }
    best.map(|(h, _)| h)
        .ok_or(Error::BandwidthSearchFailed { failing })
}

fn loo_error(design: &DesignCache, frame: &IndexFrame, family: KernelFamily, h: f64) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..design.n() {
        let fit = crate::estimators::profiled_wls(design, frame, frame.t[j], family, h, Some(j))
            .map_err(|e| e.at_observation(j))?;
        total += fit.loo_error(design, j, frame.t[j]);
    }
    Ok(total)
}

/// Index values sorted once so that kernel windows can be located by binary
/// search.
#[derive(Debug, Clone)]
pub struct IndexFrame {
    pub t: Vec<f64>,
    order: Vec<usize>,
    sorted: Vec<f64>,
}

impl IndexFrame {
    pub fn new(t: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&i| t[i]).collect();
        IndexFrame {
            t: t.to_vec(),
            order,
            sorted,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn window(&self, target: f64, family: KernelFamily, h: f64) -> Range<usize> {
        let r = family.window_radius() * h;
        let lo = self.sorted.partition_point(|&v| v <= target - r);
        let hi = self.sorted.partition_point(|&v| v < target + r);
        lo..hi.max(lo)
    }

    /// Observations with nonzero weight around `target`, in ascending index
    /// order, with raw kernel values `K_h(tᵢ - target)`.
    pub fn neighbors(&self, target: f64, family: KernelFamily, h: f64) -> Neighbors {
        let range = self.window(target, family, h);
        let mut idx: Vec<usize> = self.order[range].to_vec();
        idx.sort_unstable();
        let mut out = Neighbors {
            idx: Vec::with_capacity(idx.len()),
            k: Vec::with_capacity(idx.len()),
            d: Vec::with_capacity(idx.len()),
        };
        for i in idx {
            let d = self.t[i] - target;
            let k = family.value(d / h) / h;
            if k > 0.0 {
                out.idx.push(i);
                out.k.push(k);
                out.d.push(d);
            }
        }
        out
    }
}

/// Observations in a kernel window: indices, raw kernel values and index
/// offsets `tᵢ - target`.
#[derive(Debug, Clone, Default)]
pub struct Neighbors {
    pub idx: Vec<usize>,
    pub k: Vec<f64>,
    pub d: Vec<f64>,
}

impl Neighbors {
    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.k.iter().sum()
    }

    /// Rescales the kernel values to sum to one.
    pub fn normalize(&mut self, target: f64) -> Result<()> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::EmptyNeighborhood {
                target: format!("{target}"),
            });
        }
        self.k.iter_mut().for_each(|v| *v /= total);
        Ok(())
    }

    pub fn without(mut self, j: usize) -> Self {
        if let Some(pos) = self.idx.iter().position(|&i| i == j) {
            self.idx.remove(pos);
            self.k.remove(pos);
            self.d.remove(pos);
        }
        self
    }
}
