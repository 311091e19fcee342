//! Data-generating processes for the six simulation designs, the replication
//! runner and table emission.

use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{pilot_index, solve_index_best_effort, IndexFit, IndexParam, Method, PilotKind};
use crate::inference::bootstrap_from_fit;
use crate::kernel::{rule_of_thumb, BandwidthRole, KernelConfig, KernelFamily, DEFAULT_TRIM};
use crate::randomization::{RandomizationSpec, TreatmentKind};
use crate::rules::{pcd, value_function, DecisionRule};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_start_matches("sim").trim_start_matches('s') {
            "1" => Ok(ScenarioId::S1),
            "2" => Ok(ScenarioId::S2),
            "3" => Ok(ScenarioId::S3),
            "4" => Ok(ScenarioId::S4),
            "5" => Ok(ScenarioId::S5),
            "6" => Ok(ScenarioId::S6),
            _ => Err(Error::Config(format!("unknown scenario '{s}' (expected S1..S6)"))),
        }
    }
}

/// Covariate distribution of a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Independent `U(0,1)` coordinates.
    Uniform,
    /// Independent standard normal coordinates.
    Normal,
}

/// Fixed ingredients of a design. The functions `f` and `g` are provided by
/// [`ScenarioId::f`] and [`ScenarioId::g`].
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub p: usize,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub covariates: CovariateLaw,
    pub spec: RandomizationSpec,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
        ScenarioId::S5,
        ScenarioId::S6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S4 => "S4",
            ScenarioId::S5 => "S5",
            ScenarioId::S6 => "S6",
        }
    }

    pub fn truth(self) -> Truth {
        let spec = match self {
            ScenarioId::S1 | ScenarioId::S2 | ScenarioId::S3 => RandomizationSpec::binary_constant(0.5),
            ScenarioId::S4 => RandomizationSpec::binary_logistic(vec![0.3, -0.2]),
            ScenarioId::S5 => RandomizationSpec::categorical(vec![0.4, 0.2]),
            ScenarioId::S6 => RandomizationSpec::uniform_dose(0.0, 1.0, 2),
        }
        .expect("built-in designs are valid");
        let (beta, covariates) = match self {
            ScenarioId::S1 => (vec![1.0, -1.0], CovariateLaw::Uniform),
            ScenarioId::S2 => (vec![1.0, -1.0, 2.0], CovariateLaw::Uniform),
            ScenarioId::S3 | ScenarioId::S4 | ScenarioId::S6 => (vec![1.0, -1.0], CovariateLaw::Normal),
            ScenarioId::S5 => (vec![1.0, -1.0, 1.0], CovariateLaw::Normal),
        };
        Truth {
            p: beta.len(),
            beta,
            sigma: 0.3,
            covariates,
            spec,
        }
    }

    /// Baseline response.
    pub fn f(self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        match self {
            ScenarioId::S5 | ScenarioId::S6 => 0.5 * s,
            _ => 0.05 * s,
        }
    }

    /// Effect functions at index value `t`.
    pub fn g(self, t: f64) -> Vec<f64> {
        match self {
            ScenarioId::S1 => vec![(1.5 * t).exp() - 1.0],
            ScenarioId::S2 => vec![(std::f64::consts::PI * t).sin()],
            ScenarioId::S3 => vec![2.0 * t],
            ScenarioId::S4 => vec![2.0 * t + (2.0 * t).sin()],
            ScenarioId::S5 => vec![0.5 * t * t - 1.0, t * t.sin() - 1.0],
            ScenarioId::S6 => vec![0.5 * t * t * t, 2.0 - t * t],
        }
    }

    /// Derivative of the (single) effect function.
    pub fn g_prime(self, t: f64) -> Vec<f64> {
        match self {
            ScenarioId::S1 => vec![1.5 * (1.5 * t).exp()],
            ScenarioId::S2 => vec![std::f64::consts::PI * (std::f64::consts::PI * t).cos()],
            ScenarioId::S3 => vec![2.0],
            ScenarioId::S4 => vec![2.0 + 2.0 * (2.0 * t).cos()],
            ScenarioId::S5 => vec![t, t.sin() + t * t.cos()],
            ScenarioId::S6 => vec![1.5 * t * t, -2.0 * t],
        }
    }

    /// Estimator matching the design's treatment kind.
    pub fn default_method(self) -> Method {
        match self {
            ScenarioId::S5 => Method::CatEff,
            ScenarioId::S6 => Method::ContEff,
            _ => Method::M1,
        }
    }

    /// Draws one covariate vector.
    pub fn draw_x<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        let truth_p = match self {
            ScenarioId::S2 | ScenarioId::S5 => 3,
            _ => 2,
        };
        match self {
            ScenarioId::S1 | ScenarioId::S2 => (0..truth_p).map(|_| rng.random::<f64>()).collect(),
            _ => (0..truth_p).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    /// `E(Y | x, Z = z)`.
    pub fn mean_response(self, x: &[f64], z: f64, kind: TreatmentKind) -> f64 {
        let g = self.g(dot(&self.truth().beta, x));
        let s = kind.components_of(z);
        self.f(x) + s.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// A design at a sample size with a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub n: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn new(id: ScenarioId, n: usize, seed: u64) -> Self {
        Scenario { id, n, seed }
    }

    pub fn truth(&self) -> Truth {
        self.id.truth()
    }
}

/// Draws a dataset; identical seeds give identical datasets.
pub fn generate(scenario: &Scenario) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    generate_with(scenario.id, scenario.n, &mut rng)
}

fn generate_with<R: Rng + ?Sized>(id: ScenarioId, n: usize, rng: &mut R) -> Result<Dataset> {
    let truth = id.truth();
    let noise = Normal::new(0.0, truth.sigma).expect("positive noise scale");
    let kind = truth.spec.kind();
    let mut x = Vec::with_capacity(n * truth.p);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = id.draw_x(rng);
        let zi = truth.spec.sample(&xi, rng)?;
        let eps: f64 = noise.sample(rng);
        y.push(id.mean_response(&xi, zi, kind) + eps);
        z.push(zi);
        x.extend(xi);
    }
    Dataset::new(truth.p, x, z, y)
}

/// Seed of task `index` derived from a base seed; independent of the order
/// in which tasks run.
pub fn task_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index + 1);
    rng.next_u64()
}

/// Monte Carlo value of the oracle rule, averaging `E(Y | x, Z = d(x))` over
/// covariate draws.
pub fn true_value_function(id: ScenarioId, mc_draws: usize, seed: u64) -> Result<f64> {
    if mc_draws == 0 {
        return Err(Error::Config("need at least one Monte Carlo draw".into()));
    }
    let truth = id.truth();
    let rule = DecisionRule::for_spec(&truth.spec)?;
    let kind = truth.spec.kind();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..mc_draws {
        let x = id.draw_x(&mut rng);
        let d = rule.apply(&id.g(dot(&truth.beta, &x)))?;
        total += id.mean_response(&x, d, kind);
    }
    Ok(total / mc_draws as f64)
}

/// How the smoothing bandwidths of each replicate are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BandwidthPolicy {
    Fixed { h_g: f64, h_u: f64 },
    /// `c · sd(β̃ᵀx) · n^(-1/5)` at the pilot index `β̃`.
    RuleOfThumb { constant: f64 },
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::RuleOfThumb { constant: 1.0 }
    }
}

/// Resolves a bandwidth policy on a dataset. The rule of thumb is evaluated
/// at [`bandwidth_pilot`].
pub fn resolve_kernel(
    dataset: &Dataset,
    spec: &RandomizationSpec,
    family: KernelFamily,
    policy: BandwidthPolicy,
) -> Result<KernelConfig> {
    match policy {
        BandwidthPolicy::Fixed { h_g, h_u } => KernelConfig::new(family, h_g, h_u),
        BandwidthPolicy::RuleOfThumb { constant } => {
            let pilot = bandwidth_pilot(dataset, spec)?;
            let t = dataset.index_values(pilot.beta());
            let h = rule_of_thumb(&t, dataset.n(), BandwidthRole::GFit, constant)?;
            KernelConfig::single(family, h)
        }
    }
}

/// Index at which data-driven bandwidths are evaluated: the direction
/// search with several treatment components, otherwise the outer-gradient
/// pilot, falling back to least squares.
pub fn bandwidth_pilot(dataset: &Dataset, spec: &RandomizationSpec) -> Result<IndexParam> {
    if spec.kind().components() > 1 {
        pilot_index(dataset, spec, PilotKind::DirectionSearch)
    } else {
        Err(Error::DegenerateIndex)
    }
    .or_else(|_| pilot_index(dataset, spec, PilotKind::OuterGradient))
    .or_else(|_| pilot_index(dataset, spec, PilotKind::LeastSquares))
}

/// Per-replicate bootstrap used for standard errors and coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    /// Number of leading replicates that get a bootstrap.
    pub reps_cp: usize,
    /// Bootstrap draws per replicate.
    pub b: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub family: KernelFamily,
    pub bandwidth: BandwidthPolicy,
    pub coverage: Option<CoverageConfig>,
    /// Compute the weighted value of the fitted rule (discrete kinds only).
    pub value_function: bool,
    /// Minimum effective neighbor count per treatment component for a term
    /// in the estimating equation.
    #[serde(default = "default_trim")]
    pub trim: f64,
}

fn default_trim() -> f64 {
    DEFAULT_TRIM
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            family: KernelFamily::Epanechnikov,
            bandwidth: BandwidthPolicy::default(),
            coverage: None,
            value_function: true,
            trim: DEFAULT_TRIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    /// Mean bootstrap standard deviation over the bootstrapped replicates.
    pub se: Option<f64>,
    /// Fraction of bootstrapped replicates whose interval covers the truth.
    pub cp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Aggregates over the replicates that produced a converged fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: ScenarioId,
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub reps: usize,
    /// Replicates entering the aggregates.
    pub used: usize,
    /// Replicates whose fit raised an error.
    pub failures: usize,
    /// Replicates whose solver stopped without meeting the tolerance.
    pub nonconverged: usize,
    /// False when fewer than two replicates were used; SDs are then 0.
    pub sd_defined: bool,
    pub coordinates: Vec<CoordinateSummary>,
    pub pcd: Vec<MetricSummary>,
    pub vf: Option<MetricSummary>,
    /// Replicates with a successful bootstrap.
    pub coverage_reps: usize,
    pub config: ReplicationConfig,
    pub notes: Vec<String>,
    /// Elapsed seconds; not serialized and ignored by equality so that
    /// emitted tables are reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl PartialEq for ReplicationReport {
    fn eq(&self, o: &Self) -> bool {
        self.scenario == o.scenario
            && self.method == o.method
            && self.n == o.n
            && self.seed == o.seed
            && self.reps == o.reps
            && self.used == o.used
            && self.failures == o.failures
            && self.nonconverged == o.nonconverged
            && self.sd_defined == o.sd_defined
            && self.coordinates == o.coordinates
            && self.pcd == o.pcd
            && self.vf == o.vf
            && self.coverage_reps == o.coverage_reps
            && self.config == o.config
            && self.notes == o.notes
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub pcd: Vec<f64>,
    pub vf: Option<f64>,
    pub boot_sd: Option<Vec<f64>>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub kernel: KernelConfig,
}

/// Fits one replicate. Exposed so that callers can inspect raw draws.
pub fn run_replicate(
    id: ScenarioId,
    n: usize,
    method: Method,
    seed: u64,
    index: usize,
    config: &ReplicationConfig,
) -> Result<ReplicateOutcome> {
    let truth = id.truth();
    let data = generate(&Scenario::new(id, n, task_seed(seed, index as u64)))?;
    let components = truth.spec.kind().components() as f64;
    let kernel = resolve_kernel(&data, &truth.spec, config.family, config.bandwidth)?.with_trim(config.trim * components)?;
    let fit = solve_index_best_effort(&data, &truth.spec, method, &kernel, None)?;
    let sample: Vec<Vec<f64>> = data.rows().map(|r| r.to_vec()).collect();
    let pcd_v = pcd(&fit, &|t| id.g(t), &truth.beta, &sample)?;
    let vf = if config.value_function && !matches!(truth.spec.kind(), TreatmentKind::ContinuousDose { .. }) {
        value_function(&data, &truth.spec, &fit).ok()
    } else {
        None
    };
    let (boot_sd, ci) = match config.coverage {
        Some(cov) if index < cov.reps_cp && fit.converged => coverage_draws(&data, &fit, cov, seed, index),
        _ => (None, None),
    };
    Ok(ReplicateOutcome {
        index,
        beta: fit.beta_hat.beta().to_vec(),
        converged: fit.converged,
        pcd: pcd_v,
        vf,
        boot_sd,
        ci,
        kernel,
    })
}

type CoverageDraws = (Option<Vec<f64>>, Option<Vec<(f64, f64)>>);

fn coverage_draws(data: &Dataset, fit: &IndexFit, cov: CoverageConfig, seed: u64, index: usize) -> CoverageDraws {
    let boot_seed = task_seed(seed ^ 0x5eed_b007, index as u64);
    match bootstrap_from_fit(data, fit, cov.b, cov.level, boot_seed) {
        Ok(res) => {
            let sd = res.draw_sd();
            (Some(sd), Some(res.ci_per_coord))
        }
        Err(_) => (None, None),
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|a| (a - mean) * (a - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Runs `reps` independent replicates on `parallelism` worker threads.
pub fn run_replications(
    scenario: &Scenario,
    method: Method,
    reps: usize,
    config: &ReplicationConfig,
    parallelism: usize,
) -> Result<ReplicationReport> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let truth = scenario.truth();
    method.check_kind(truth.spec.kind())?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<ReplicateOutcome>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| run_replicate(scenario.id, scenario.n, method, scenario.seed, r, config))
            .collect()
    });
    let mut report = summarize(scenario, method, reps, config, &outcomes);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Aggregates replicate outcomes, in replicate order.
pub fn summarize(
    scenario: &Scenario,
    method: Method,
    reps: usize,
    config: &ReplicationConfig,
    outcomes: &[Result<ReplicateOutcome>],
) -> ReplicationReport {
    let truth = scenario.truth();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let nonconverged = ok.iter().filter(|o| !o.converged).count();
    let used: Vec<&ReplicateOutcome> = ok.into_iter().filter(|o| o.converged).collect();
    let boot: Vec<&&ReplicateOutcome> = used.iter().filter(|o| o.ci.is_some()).collect();

    let coordinates = (1..truth.p)
        .map(|c| {
            let vals: Vec<f64> = used.iter().map(|o| o.beta[c]).collect();
            let (mean, sd) = mean_sd(&vals);
            let (se, cp) = if boot.is_empty() {
                (None, None)
            } else {
                let se = boot.iter().map(|o| o.boot_sd.as_ref().unwrap()[c - 1]).sum::<f64>() / boot.len() as f64;
                let hit = boot
                    .iter()
                    .filter(|o| {
                        let (lo, hi) = o.ci.as_ref().unwrap()[c - 1];
                        lo <= truth.beta[c] && truth.beta[c] <= hi
                    })
                    .count();
                (Some(se), Some(hit as f64 / boot.len() as f64))
            };
            CoordinateSummary {
                name: format!("beta{}", c + 1),
                truth: truth.beta[c],
                bias: mean - truth.beta[c],
                sd,
                se,
                cp,
            }
        })
        .collect();

    let k = truth.spec.kind().components();
    let pcd = (0..k)
        .map(|a| {
            let vals: Vec<f64> = used.iter().map(|o| o.pcd[a]).collect();
            let (mean, sd) = mean_sd(&vals);
            MetricSummary {
                name: if k == 1 { "PCD".into() } else { format!("PCD{}", a + 1) },
                mean,
                sd,
            }
        })
        .collect();

    let vf_vals: Vec<f64> = used.iter().filter_map(|o| o.vf).collect();
    let vf = (!vf_vals.is_empty()).then(|| {
        let (mean, sd) = mean_sd(&vf_vals);
        MetricSummary {
            name: "VF".into(),
            mean,
            sd,
        }
    });

    let mut notes = Vec::new();
    if config.coverage.is_some() {
        notes.push("CP uses per-coordinate percentile intervals".into());
    }
    if vf_vals.len() < used.len() && config.value_function {
        notes.push(format!(
            "value function unavailable for {} replicates",
            used.len() - vf_vals.len()
        ));
    }

    ReplicationReport {
        scenario: scenario.id,
        method,
        n: scenario.n,
        seed: scenario.seed,
        reps,
        used: used.len(),
        failures,
        nonconverged,
        sd_defined: used.len() >= 2,
        coordinates,
        pcd,
        vf,
        coverage_reps: boot.len(),
        config: config.clone(),
        notes,
        wall_time_secs: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Json,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(TableFormat::Json),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// Column names of the CSV table.
pub const TABLE_HEADER: [&str; 11] = [
    "block", "name", "truth", "Bias", "SD", "SE", "CP", "PCD", "SD(PCD)", "VF", "SD(VF)",
];

/// Renders a report as pretty JSON or as a CSV table with one row per
/// coordinate and per metric.
pub fn emit_tables(report: &ReplicationReport, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TABLE_HEADER)?;
            let opt = |v: Option<f64>| v.map(|a| a.to_string()).unwrap_or_default();
            for c in &report.coordinates {
                w.write_record([
                    "coefficient".to_string(),
                    c.name.clone(),
                    c.truth.to_string(),
                    c.bias.to_string(),
                    c.sd.to_string(),
                    opt(c.se),
                    opt(c.cp),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
            for m in &report.pcd {
                w.write_record([
                    "pcd".to_string(),
                    m.name.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    m.mean.to_string(),
                    m.sd.to_string(),
                    String::new(),
                    String::new(),
                ])?;
            }
            if let Some(v) = &report.vf {
                w.write_record([
                    "value".to_string(),
                    v.name.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    v.mean.to_string(),
                    v.sd.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let s = Scenario::new(ScenarioId::S1, 50, 11);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = Scenario::new(ScenarioId::S1, 50, 12);
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn conditional_contrast_is_g() {
        let kind = TreatmentKind::Binary;
        for x in [[0.2, 0.7], [0.9, 0.1]] {
            let t = x[0] - x[1];
            let diff = ScenarioId::S1.mean_response(&x, 1.0, kind) - ScenarioId::S1.mean_response(&x, 0.0, kind);
            assert!((diff - ((1.5 * t).exp() - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn categorical_arm_frequencies() {
        let d = generate(&Scenario::new(ScenarioId::S5, 100_000, 3)).unwrap();
        let n = d.n() as f64;
        for (level, p) in [(0.0, 0.4), (1.0, 0.4), (2.0, 0.2)] {
            let f = d.z().iter().filter(|&&z| z == level).count() as f64 / n;
            assert!((f - p).abs() < 0.01, "level {level}: {f}");
        }
    }

    #[test]
    fn marginal_moments_match_declared_laws() {
        let n = 100_000;
        for id in ScenarioId::ALL {
            let truth = id.truth();
            let d = generate(&Scenario::new(id, n, 99)).unwrap();
            let (xm, xv) = match truth.covariates {
                CovariateLaw::Uniform => (0.5, 1.0 / 12.0),
                CovariateLaw::Normal => (0.0, 1.0),
            };
            for a in 0..truth.p {
                let col: Vec<f64> = d.rows().map(|r| r[a]).collect();
                let (m, s) = mean_sd(&col);
                let se = (xv / n as f64).sqrt();
                assert!((m - xm).abs() < 3.0 * se, "{id:?} x{a} mean {m}");
                // Variance of the sample variance is about 2σ⁴/n for the normal
                // and 4σ⁴/(5n) for the uniform.
                let var_se = (2.0 * xv * xv / n as f64).sqrt();
                assert!((s * s - xv).abs() < 3.0 * var_se, "{id:?} x{a} var {}", s * s);
            }
            // Residuals around the conditional mean are the noise draws.
            let kind = truth.spec.kind();
            let eps: Vec<f64> = (0..n)
                .map(|i| d.y()[i] - id.mean_response(d.x(i), d.z()[i], kind))
                .collect();
            let (m, s) = mean_sd(&eps);
            assert!(m.abs() < 3.0 * 0.3 / (n as f64).sqrt(), "{id:?} noise mean {m}");
            assert!((s * s - 0.09).abs() < 3.0 * (2.0 * 0.09f64.powi(2) / n as f64).sqrt());
            // Treatment mean against the law, averaged over x.
            let zbar = d.z().iter().sum::<f64>() / n as f64;
            let expect: f64 = (0..n)
                .map(|i| {
                    let m = truth.spec.mean_given_x(d.x(i)).unwrap();
                    match kind {
                        TreatmentKind::Categorical { .. } => m.iter().enumerate().map(|(k, p)| (k + 1) as f64 * p).sum(),
                        _ => m[0],
                    }
                })
                .sum::<f64>()
                / n as f64;
            assert!((zbar - expect).abs() < 3.0 * (0.8 / n as f64).sqrt(), "{id:?} z mean {zbar}");
        }
    }

    #[test]
    fn task_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| task_seed(7, i)).collect();
        let b: Vec<u64> = (0..100).map(|i| task_seed(7, i)).collect();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 100);
    }

    #[test]
    fn scenario_names_parse() {
        assert_eq!("S3".parse::<ScenarioId>().unwrap(), ScenarioId::S3);
        assert_eq!("sim5".parse::<ScenarioId>().unwrap(), ScenarioId::S5);
        assert_eq!("6".parse::<ScenarioId>().unwrap(), ScenarioId::S6);
        assert!("S7".parse::<ScenarioId>().is_err());
        assert!(matches!("xml".parse::<TableFormat>(), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn linear_effect_value_has_closed_form() {
        // With g(t) = 2t and t ~ N(0, 2): E max(0, 2t) = 2·sqrt(2)/sqrt(2π).
        let v = true_value_function(ScenarioId::S3, 400_000, 5).unwrap();
        let exact = 2.0 / std::f64::consts::PI.sqrt();
        assert!((v - exact).abs() < 0.01, "{v} vs {exact}");
    }
}
