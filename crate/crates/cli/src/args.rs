use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "sitr", version, about = "Single-index individualized treatment rules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the index, optionally with bootstrap intervals, and the
    /// effect curve on a 101-point grid.
    Fit(FitArgs),
    /// Monte Carlo replications of a built-in scenario.
    Simulate(SimulateArgs),
    /// Percentile bootstrap intervals for the index coefficients.
    Bootstrap(BootstrapArgs),
    /// Permutation band for the effect curve under no treatment effect.
    Permtest(PermtestArgs),
    /// Effect curve with bootstrap pointwise bands.
    Curve(CurveArgs),
    /// Draw a dataset from a built-in scenario and write it as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Epanechnikov,
    Gaussian,
    #[value(alias = "biweight")]
    Quartic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    M1,
    M2,
    M3,
    M4,
    Cont,
    Cat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FStarArg {
    Zero,
}

/// Where the observations come from: a CSV file with a declared design, or
/// a scenario drawn with the seed.
#[derive(Debug, Clone, Args)]
#[group(skip)]
pub struct SourceArgs {
    /// Headed CSV file of observations.
    #[arg(long, value_name = "PATH", required_unless_present = "scenario", conflicts_with = "scenario")]
    pub data: Option<PathBuf>,
    /// Built-in scenario S1..S6.
    #[arg(long, value_name = "ID")]
    pub scenario: Option<String>,
    /// Sample size drawn for a scenario.
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    /// Randomization design as JSON, inline or a file path. Required with
    /// --data.
    #[arg(long, value_name = "JSON|PATH")]
    pub design: Option<String>,
    /// Covariate columns, comma separated. Defaults to every column other
    /// than the treatment and response.
    #[arg(long, value_delimiter = ',', value_name = "COLS")]
    pub x_cols: Vec<String>,
    #[arg(long, default_value = "z")]
    pub z_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Estimator; defaults to m1, cat or cont according to the design.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum, default_value = "epanechnikov")]
    pub kernel: KernelArg,
    /// Bandwidth of the effect-curve smoother.
    #[arg(long)]
    pub hg: Option<f64>,
    /// Bandwidth of the covariate-mean smoother; defaults to --hg.
    #[arg(long, requires = "hg")]
    pub hu: Option<f64>,
    /// Choose the bandwidth by leave-one-out cross-validation at the pilot
    /// index.
    #[arg(long, conflicts_with = "hg")]
    pub cv_bandwidth: bool,
    /// Constant of the rule-of-thumb bandwidth.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_constant: f64,
    /// Working baseline regression.
    #[arg(long, value_enum, default_value = "zero")]
    pub fstar: FStarArg,
    /// Minimum effective neighbor count per treatment component.
    #[arg(long, default_value_t = sitr_core::DEFAULT_TRIM)]
    pub trim: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Bootstrap draws for coefficient intervals; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    pub boot: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    pub boot: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PermtestArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of treatment permutations.
    #[arg(long, default_value_t = 200)]
    pub perm: usize,
    /// Pointwise quantile level of the band.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Keep the index at the observed estimate instead of refitting it.
    #[arg(long)]
    pub hold_beta: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in scenario S1..S6.
    #[arg(long, value_name = "ID")]
    pub scenario: String,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum, default_value = "epanechnikov")]
    pub kernel: KernelArg,
    #[arg(long)]
    pub hg: Option<f64>,
    #[arg(long, requires = "hg")]
    pub hu: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_constant: f64,
    #[arg(long, value_enum, default_value = "zero")]
    pub fstar: FStarArg,
    #[arg(long, default_value_t = sitr_core::DEFAULT_TRIM)]
    pub trim: f64,
    /// Bootstrap draws per replicate for standard errors and coverage.
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    /// Number of leading replicates that get a bootstrap; defaults to all.
    #[arg(long)]
    pub reps_cp: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_name = "ID")]
    pub scenario: String,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write the scenario's randomization design as JSON.
    #[arg(long, value_name = "PATH")]
    pub design_out: Option<PathBuf>,
}
