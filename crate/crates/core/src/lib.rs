//! Semiparametric single-index treatment-effect models under
//! covariate-adjusted randomization.

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod local_fit;
pub mod randomization;
pub mod rules;
pub mod simlab;

pub use data::Dataset;
pub use error::{Error, ErrorCategory, Result};
pub use estimators::{
    build_w_basis, fit_at_beta, gradient_method4, objective_method4, pilot_index, predict_g, score_efficient_multi, score_method1,
    score_method2, score_method3, solve_index, solve_index_best_effort, solve_index_with, transform_y, IndexFit,
    IndexFitSummary, IndexParam, Method, PilotKind, SolveOptions, StartKind, WBasis, WorkingModels,
};
pub use io::{load_csv, read_csv, write_csv, ColumnRoles};
pub use kernel::{
    default_bandwidth, kernel_value, loo_cv_bandwidth, neighbor_weights, scaled_kernel, BandwidthRole, KernelConfig,
    KernelFamily, DEFAULT_TRIM,
};
pub use local_fit::{
    local_constant_g, local_linear_binary, local_linear_multi, u_hat, FStar, LocalLinearFit, MultiArmLocalFit,
};
pub use randomization::{AssignmentLaw, RandomizationSpec, TreatmentKind};
pub use inference::{
    bootstrap_beta, bootstrap_curve, bootstrap_from_fit, permutation_band_g, permutation_band_with, quantile_grid,
    sandwich_oracle_binary, sandwich_oracle_with, BinaryTruth, BootstrapResult, CurveBand, PermutationBand,
    SandwichOracle, SandwichVariant,
};
pub use rules::{assignment_crosstab, decide, pcd, value_function, Crosstab, DecisionRule};
pub use simlab::{
    bandwidth_pilot, emit_tables, generate, resolve_kernel, run_replications, true_value_function, BandwidthPolicy, CoverageConfig,
    ReplicationConfig, ReplicationReport, Scenario, ScenarioId, TableFormat,
};
