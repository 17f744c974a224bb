use thiserror::Error;

pub type Result<T> = std::result::Result<T, MvalError>;

/// Every failure the library can report.
///
/// [`MvalError::code`] gives a stable single-token name for each variant; the
/// command-line front end prints it on stderr ahead of the human message.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MvalError {
    #[error("policy table is empty or not rectangular")]
    NotRectangular,

    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("negative probability {value} at row {row}, column {col}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("row {row} sums to {sum} (deviation {deviation:e} exceeds tolerance)")]
    RowSumOutOfTolerance { row: usize, sum: f64, deviation: f64 },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("mix profile needs at least one sample (n_log = n_aug = 0)")]
    EmptyMix,

    #[error("sample {index} references context {context} / action {action} outside the label set")]
    UnknownId {
        index: usize,
        context: usize,
        action: usize,
    },

    #[error("dataset holds {found_log} log / {found_aug} aug samples but the mix expects {n_log} / {n_aug}")]
    CountMismatch {
        n_log: usize,
        n_aug: usize,
        found_log: usize,
        found_aug: usize,
    },

    #[error("no {0} policy attached to the dataset")]
    MissingSourcePolicy(&'static str),

    #[error("sample {index} has zero propensity under its source policy")]
    ZeroPropensity { index: usize },

    #[error("sample {index} has zero balanced propensity (mixture lacks support)")]
    ZeroBalancedPropensity { index: usize },

    #[error("variance is infinite: target mass at context {context}, action {action} has no support")]
    InfiniteVariance { context: usize, action: usize },

    #[error("variance evaluated to {value:e}, below zero beyond rounding")]
    NegativeVariance { value: f64 },

    #[error("need at least two values, got {0}")]
    TooFewValues(usize),

    #[error("enumeration needs {needed} outcomes, budget is {budget}")]
    TooLarge { needed: u128, budget: u128 },

    #[error("reward law cannot be enumerated (only bernoulli rewards have finite support)")]
    NotEnumerable,

    #[error("alpha must be positive: no augmentation budget")]
    ZeroAlpha,

    #[error("alpha {0} outside (0, 1]")]
    InvalidAlpha(f64),

    #[error("invalid solver weights: {0}")]
    InvalidWeights(String),

    #[error("target row has no mass where the second moment is positive")]
    DegenerateWeights,

    #[error("grid oracle supports at most {max} actions, got {found}")]
    TooManyActions { max: usize, found: usize },

    #[error("grid resolution {0} outside 1..=2000")]
    InvalidResolution(usize),

    #[error("policy class is empty")]
    EmptyClass,

    #[error("trust region infeasible at context {context}: lower bounds sum to {lower_sum}")]
    InfeasibleClass { context: usize, lower_sum: f64 },

    #[error("invalid trust-region radius {0} (must be >= 1)")]
    InvalidTau(f64),

    #[error("variance bound is infinite at context {context}, action {action}")]
    InfiniteBound { context: usize, action: usize },

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("objective is infinite: zero denominator at context {context}, action {action}")]
    InfiniteObjective { context: usize, action: usize },

    #[error("objective diverged at step {step}")]
    DivergedObjective { step: usize },

    #[error("rank {rank} outside 2..={actions}")]
    RankOutOfRange { rank: usize, actions: usize },

    #[error("rejection sampling needs a uniformly logged source")]
    NotUniformSource,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl MvalError {
    /// Stable machine-readable name of the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            MvalError::NotRectangular => "NotRectangular",
            MvalError::NonFinite { .. } => "NonFinite",
            MvalError::NegativeEntry { .. } => "NegativeEntry",
            MvalError::RowSumOutOfTolerance { .. } => "RowSumOutOfTolerance",
            MvalError::ShapeMismatch { .. } => "ShapeMismatch",
            MvalError::InvalidEnvironment(_) => "InvalidEnvironment",
            MvalError::EmptyMix => "EmptyMix",
            MvalError::UnknownId { .. } => "UnknownId",
            MvalError::CountMismatch { .. } => "CountMismatch",
            MvalError::MissingSourcePolicy(_) => "MissingSourcePolicy",
            MvalError::ZeroPropensity { .. } => "ZeroPropensity",
            MvalError::ZeroBalancedPropensity { .. } => "ZeroBalancedPropensity",
            MvalError::InfiniteVariance { .. } => "InfiniteVariance",
            MvalError::NegativeVariance { .. } => "NegativeVariance",
            MvalError::TooFewValues(_) => "TooFewValues",
            MvalError::TooLarge { .. } => "TooLarge",
            MvalError::NotEnumerable => "NotEnumerable",
            MvalError::ZeroAlpha => "ZeroAlpha",
            MvalError::InvalidAlpha(_) => "InvalidAlpha",
            MvalError::InvalidWeights(_) => "InvalidWeights",
            MvalError::DegenerateWeights => "DegenerateWeights",
            MvalError::TooManyActions { .. } => "TooManyActions",
            MvalError::InvalidResolution(_) => "InvalidResolution",
            MvalError::EmptyClass => "EmptyClass",
            MvalError::InfeasibleClass { .. } => "InfeasibleClass",
            MvalError::InvalidTau(_) => "InvalidTau",
            MvalError::InfiniteBound { .. } => "InfiniteBound",
            MvalError::DimMismatch { .. } => "DimMismatch",
            MvalError::InfiniteObjective { .. } => "InfiniteObjective",
            MvalError::DivergedObjective { .. } => "DivergedObjective",
            MvalError::RankOutOfRange { .. } => "RankOutOfRange",
            MvalError::NotUniformSource => "NotUniformSource",
            MvalError::InvalidConfig(_) => "InvalidConfig",
            MvalError::Io(_) => "Io",
            MvalError::Parse(_) => "Parse",
        }
    }
}

impl From<std::io::Error> for MvalError {
    fn from(e: std::io::Error) -> Self {
        MvalError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for MvalError {
    fn from(e: serde_json::Error) -> Self {
        MvalError::Parse(e.to_string())
    }
}

impl From<csv::Error> for MvalError {
    fn from(e: csv::Error) -> Self {
        MvalError::Parse(e.to_string())
    }
}
