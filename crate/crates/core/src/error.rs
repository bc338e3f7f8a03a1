use alloc::string::String;

/// Errors produced by the mixing-optimization core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, not 1")]
    SumNotOne { sum: f64 },
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("grid sweep is only defined for 2 groups, got {0}")]
    GridRequiresTwoGroups(usize),
    #[error("candidates {0} and {1} coincide")]
    DuplicateCandidates(usize, usize),
    #[error("invalid Dirichlet parameters: {0}")]
    InvalidAlpha(&'static str),
    #[error("group index {index} out of range for {m} groups")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("smoothing factor {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("invalid law parameters: {0}")]
    InvalidParams(&'static str),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("no restart reached the convergence tolerance")]
    NonConvergence,
    #[error("proportion design matrix has rank {rank} < {m}")]
    SingularDesign { rank: usize, m: usize },
    #[error("scale is degenerate: method matrix times proportions is zero everywhere")]
    DegenerateScale,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("unknown snapshot token {0}")]
    UnknownToken(u64),
    #[error("all proportion mass vanished in the update")]
    ZeroMass,
    #[error("cannot normalize the zero matrix")]
    ZeroMatrix,
    #[error("EMA coefficient {0} outside [0, 1)")]
    GammaOutOfRange(f64),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("budget exceeded: requested {requested} extra steps, {remaining} remaining")]
    BudgetExceeded { requested: u64, remaining: u64 },
    #[error("sweep mixture matrix is singular")]
    SingularP,
    #[error("{steps} steps cannot be split into {intervals} equal intervals")]
    IndivisibleSteps { steps: u64, intervals: u64 },
    #[error("round {0} is not in the parameter trace")]
    RoundNotTraced(usize),
    #[error("column sums are all zero")]
    ZeroColumnSums,
    #[error("{schedules} schedules exceed the limit of {limit}")]
    ComplexityLimitExceeded { schedules: u64, limit: u64 },
    #[error("invalid hyperparameter `{field}`: {reason}")]
    InvalidHyperParams { field: &'static str, reason: &'static str },
    #[error("trainer has no out-of-domain channel")]
    MissingOodChannel,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
