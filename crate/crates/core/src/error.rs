use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mixture ({rule}): {detail}")]
    InvalidMixture { rule: &'static str, detail: String },

    #[error("invalid law coefficients: {0}")]
    InvalidLaw(String),

    #[error("invalid record {row} ({rule}): {detail}")]
    InvalidRecord { row: String, rule: &'static str, detail: String },

    #[error("input must be positive, got {0}")]
    NonPositiveInput(f64),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("record {run_id} carries no loss for domain {domain}")]
    MissingDomainLoss { run_id: String, domain: String },

    #[error("no feasible candidate mixture")]
    EmptyCandidates,

    #[error("requested {requested} mixtures but only {available} candidates exist (short by {})", requested - available)]
    Shortfall { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing coverage for cells: {}", missing.join(", "))]
    Coverage { missing: Vec<String> },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no solution: {detail}")]
    NoSolution { detail: String, value: f64 },

    #[error("degenerate slope: |t| = {0} is below 1e-12")]
    DegenerateSlope(f64),

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("all {0} resamples failed to fit")]
    AllResamplesFailed(usize),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: u64, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category for the error.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::InvalidMixture { .. } => "invalid-mixture",
            Error::InvalidLaw(_) => "invalid-law",
            Error::InvalidRecord { .. } => "invalid-record",
            Error::NonPositiveInput(_) => "non-positive-input",
            Error::InsufficientPoints { .. } => "insufficient-points",
            Error::Degenerate(_) => "degenerate",
            Error::MissingDomainLoss { .. } => "missing-domain-loss",
            Error::EmptyCandidates => "empty-candidates",
            Error::Shortfall { .. } => "shortfall",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Coverage { .. } => "coverage",
            Error::Stage { source, .. } => source.category(),
            Error::NoSolution { .. } => "no-solution",
            Error::DegenerateSlope(_) => "degenerate-slope",
            Error::InfeasibleBounds(_) => "infeasible-bounds",
            Error::AllResamplesFailed(_) => "all-resamples-failed",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}
