//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unit index {index} out of range for {n} units")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("self-loop at unit {0} is not allowed")]
    SelfLoop(usize),

    #[error("invalid probability {0}; must lie in [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid structural model: {0}")]
    InvalidSem(String),

    #[error("stored features at unit {0} disagree with recomputation from (w, c, network)")]
    FeatureMismatch(usize),

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("non-finite value in regression input")]
    NonFiniteInput,

    #[error("invalid clip threshold {0}; must lie strictly between 0 and 0.5")]
    InvalidEps(f64),

    #[error("invalid fold count {k} for {n} units; need 2 <= k <= n")]
    InvalidK { k: usize, n: usize },

    #[error(
        "cross-fitting infeasible: complement has {comp_size} units \
         ({treated} treated, {control} control) against a minimum of \
         {min_fit_size} per arm; dependency degree max {d_max}. \
         Reduce the fold count or network density."
    )]
    CrossFitInfeasible {
        comp_size: usize,
        treated: usize,
        control: usize,
        min_fit_size: usize,
        d_max: usize,
    },

    #[error("degenerate propensity {0} reached a score; values must lie strictly in (0, 1)")]
    DegeneratePropensity(f64),

    #[error("no successful repetitions to aggregate")]
    EmptyRuns,

    #[error("{failed} of {total} repetitions were cross-fit infeasible (more than half)")]
    TooManyInfeasibleRuns {
        failed: usize,
        total: usize,
        #[source]
        last: Box<Error>,
    },

    #[error("degenerate treatment arms: need at least one treated and one control unit")]
    DegenerateArms,

    #[error(
        "treatment neighborhood of unit {unit} has {size} members, above the cap {cap}; \
         raise the cap or use a sparser network"
    )]
    AlphaTooLarge { unit: usize, size: usize, cap: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
