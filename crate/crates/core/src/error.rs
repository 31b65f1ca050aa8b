use thiserror::Error;

/// Errors raised by the design, verification and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurveyError {
    #[error("invalid cost distribution: {0}")]
    InvalidDistribution(String),
    #[error("costs must be strictly increasing")]
    NonMonotoneInput,
    #[error("distribution is not regular: virtual costs {0:?} are not strictly increasing")]
    NonRegular(Vec<f64>),
    #[error("cost {0} is outside the support")]
    OutOfSupport(f64),
    #[error("bad discretization grid: eps = {0} (need 0 < eps <= 1 with 1/eps integral)")]
    BadGrid(f64),
    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("infeasible budget {0}")]
    InfeasibleBudget(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("allocation probability at index {0} is not positive")]
    ZeroAllocation(usize),
    #[error("adversary entry at index {0} is zero")]
    ZeroAdversaryEntry(usize),
    #[error("instance too large for the brute-force oracle: {0} cost types (max 4)")]
    TooLarge(usize),
    #[error("allocation rule is not monotone non-increasing at index {0}")]
    NonMonotoneAllocation(usize),
    #[error("degenerate noise range [{lo}, {hi}]")]
    DegenerateNoise { lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("weighted Gram matrix is singular")]
    SingularGram,
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl SurveyError {
    /// Short machine-readable kind, used by the CLI on stderr.
    pub fn kind(&self) -> &'static str {
        match self {
            SurveyError::InvalidDistribution(_) => "InvalidDistribution",
            SurveyError::NonMonotoneInput => "NonMonotoneInput",
            SurveyError::NonRegular(_) => "NonRegular",
            SurveyError::OutOfSupport(_) => "OutOfSupport",
            SurveyError::BadGrid(_) => "BadGrid",
            SurveyError::IndexOutOfRange { .. } => "IndexOutOfRange",
            SurveyError::InfeasibleBudget(_) => "InfeasibleBudget",
            SurveyError::DimensionMismatch { .. } => "DimensionMismatch",
            SurveyError::ZeroAllocation(_) => "ZeroAllocation",
            SurveyError::ZeroAdversaryEntry(_) => "ZeroAdversaryEntry",
            SurveyError::TooLarge(_) => "TooLarge",
            SurveyError::NonMonotoneAllocation(_) => "NonMonotoneAllocation",
            SurveyError::DegenerateNoise { .. } => "DegenerateNoise",
            SurveyError::InvalidArgument(_) => "InvalidArgument",
            SurveyError::SingularGram => "SingularGram",
            SurveyError::Internal(_) => "Internal",
        }
    }
}

pub type Result<T> = std::result::Result<T, SurveyError>;
