use thiserror::Error;

/// Coarse failure classes. The CLI maps each to a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
            ErrorCategory::Io => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bandwidth {0}: must be finite and positive")]
    InvalidBandwidth(f64),

    #[error("empty kernel neighborhood at target {target}")]
    EmptyNeighborhood { target: String },

    #[error("degenerate index: index values have zero dispersion")]
    DegenerateIndex,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation not supported for treatment kind {kind}: {detail}")]
    UnsupportedKind { kind: String, detail: String },

    #[error("invalid randomization spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate denominator {value:e} in kernel ratio at index value {at}")]
    DegenerateDenominator { at: f64, value: f64 },

    #[error("near-zero conditional treatment variance in rows {rows:?}")]
    DegenerateVariance { rows: Vec<usize> },

    #[error("singular local fit at index value {at}: v0={v0:e}, v1={v1:e}, v2={v2:e}")]
    SingularFit { at: f64, v0: f64, v1: f64, v2: f64 },

    #[error("singular multi-arm local system at index value {at} (reciprocal condition {rcond:e})")]
    SingularSystem { at: f64, rcond: f64 },

    #[error("collinear treatment powers: conditional sd {sd:e} of basis element {element} at index value {at}")]
    CollinearTreatment { element: usize, at: f64, sd: f64 },

    #[error("observation {index}: {source}")]
    AtObservation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("no start converged; best candidate {beta:?} has score norm {score_norm:e}")]
    NonConvergence { beta: Vec<f64>, score_norm: f64 },

    #[error("inference unstable: {failed} of {attempts} resamples failed ({rate:.3})")]
    InferenceUnstable {
        failed: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("assignment probability {prob:e} for recommended treatment at row {row} is below floor {floor}")]
    UnstableWeight { row: usize, prob: f64, floor: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("every candidate bandwidth failed: {failing:?}")]
    BandwidthSearchFailed { failing: Vec<f64> },

    #[error("schema error at row {row}: {detail}")]
    Schema { row: usize, detail: String },

    #[error("non-numeric cell at row {row}, column '{column}': {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("file contains no data rows")]
    EmptyFile,

    #[error("unknown output format '{0}'")]
    UnknownFormat(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidBandwidth(_) | InvalidSpec(_) | Config(_) | UnknownFormat(_)
            | DegenerateConfiguration(_) => ErrorCategory::Config,
            DimensionMismatch { .. }
            | UnsupportedKind { .. }
            | DegenerateVariance { .. }
            | LengthMismatch { .. }
            | Schema { .. }
            | NonNumeric { .. }
            | MissingValue { .. }
            | EmptyFile
            | DegenerateIndex => ErrorCategory::Data,
            EmptyNeighborhood { .. }
            | DegenerateDenominator { .. }
            | SingularFit { .. }
            | SingularSystem { .. }
            | CollinearTreatment { .. }
            | NonConvergence { .. }
            | InferenceUnstable { .. }
            | UnstableWeight { .. }
            | BandwidthSearchFailed { .. } => ErrorCategory::Numerical,
            AtObservation { source, .. } => source.category(),
            Csv(e) if e.is_io_error() => ErrorCategory::Io,
            Csv(_) => ErrorCategory::Data,
            Json(e) if e.is_io() => ErrorCategory::Io,
            Json(_) => ErrorCategory::Config,
            Io(_) => ErrorCategory::Io,
        }
    }

    /// Stable machine-readable identifier, one per variant.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidBandwidth(_) => "invalid_bandwidth",
            EmptyNeighborhood { .. } => "empty_neighborhood",
            DegenerateIndex => "degenerate_index",
            DimensionMismatch { .. } => "dimension_mismatch",
            UnsupportedKind { .. } => "unsupported_kind",
            InvalidSpec(_) => "invalid_spec",
            Config(_) => "config",
            DegenerateDenominator { .. } => "degenerate_denominator",
            DegenerateVariance { .. } => "degenerate_variance",
            SingularFit { .. } => "singular_fit",
            SingularSystem { .. } => "singular_system",
            CollinearTreatment { .. } => "collinear_treatment",
            AtObservation { source, .. } => source.code(),
            DegenerateConfiguration(_) => "degenerate_configuration",
            NonConvergence { .. } => "nonconvergence",
            InferenceUnstable { .. } => "inference_unstable",
            UnstableWeight { .. } => "unstable_weight",
            LengthMismatch { .. } => "length_mismatch",
            BandwidthSearchFailed { .. } => "bandwidth_search_failed",
            Schema { .. } => "schema",
            NonNumeric { .. } => "non_numeric",
            MissingValue { .. } => "missing_value",
            EmptyFile => "empty_file",
            UnknownFormat(_) => "unknown_format",
            Csv(_) => "csv",
            Json(_) => "json",
            Io(_) => "io",
        }
    }

    /// Wraps a pointwise failure with the observation it occurred at.
    pub fn at_observation(self, index: usize) -> Error {
        match self {
            e @ Error::AtObservation { .. } => e,
            e => Error::AtObservation {
                index,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through observation annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtObservation { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
