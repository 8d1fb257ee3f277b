use thiserror::Error;

/// A single violated model invariant, with enough indices to locate it.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelViolation {
    /// Fewer than two states.
    TooFewStates { states: usize },
    /// A matrix or vector has the wrong shape.
    Dimension { what: &'static str, expected: usize, got: usize },
    /// A negative entry where a probability was required.
    Negative { what: &'static str, row: usize, col: usize, value: f64 },
    /// A row that should sum to one does not (beyond 1e-12).
    RowSum { what: &'static str, row: usize, sum: f64 },
    /// The transition matrix is not irreducible.
    Reducible,
    /// The transition matrix is irreducible but periodic.
    Periodic { period: usize },
    /// A Gaussian standard deviation is not strictly positive.
    NonPositiveStd { state: usize, value: f64 },
    /// The `initial` field is a string other than "stationary".
    UnknownInitialTag { tag: String },
    /// A categorical emission row has an empty alphabet.
    EmptyAlphabet { state: usize },
}

impl std::fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TooFewStates { states } => write!(f, "need at least 2 states, got {states}"),
            Self::Dimension { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
            Self::Negative { what, row, col, value } => {
                write!(f, "{what}[{row}][{col}] = {value} is negative")
            }
            Self::RowSum { what, row, sum } => {
                write!(f, "{what} row {row} sums to {sum}, not 1")
            }
            Self::Reducible => write!(f, "transition matrix is reducible"),
            Self::Periodic { period } => {
                write!(f, "transition matrix is periodic with period {period}")
            }
            Self::NonPositiveStd { state, value } => {
                write!(f, "std[{state}] = {value} must be > 0")
            }
            Self::UnknownInitialTag { tag } => {
                write!(f, "initial must be a probability vector or \"stationary\", got \"{tag}\"")
            }
            Self::EmptyAlphabet { state } => {
                write!(f, "emission row {state} has an empty alphabet")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Model validation failed; every violated invariant is listed.
    #[error("invalid model: {}", format_violations(.0))]
    InvalidModel(Vec<ModelViolation>),
    /// An observation no state can emit; the likelihood of the sequence is zero.
    #[error("observation at position {position} has zero likelihood under every state")]
    ImpossibleObservation { position: usize },
    /// A categorical observation outside [0, alphabet size).
    #[error("symbol {symbol} at position {position} is outside the alphabet [0, {alphabet})")]
    SymbolOutOfRange { position: usize, symbol: usize, alphabet: usize },
    /// Discrete observations fed to a Gaussian model or vice versa.
    #[error("observation sequence type does not match the emission family ({expected} expected)")]
    ObservationType { expected: &'static str },
    /// An empty observation sequence where n >= 1 is required.
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    /// A state index outside [0, |S|).
    #[error("state {state} at position {position} is outside [0, {states})")]
    StateOutOfRange { position: usize, state: usize, states: usize },
    /// Penalty weights must be nonnegative.
    #[error("penalty c = {c} must be nonnegative and finite")]
    BadPenalty { c: f64 },
    /// Exhaustive enumeration would visit more than the allowed number of paths.
    #[error("enumeration over {paths:.3e} paths exceeds the {limit:.1e} path guard")]
    InstanceTooLarge { paths: f64, limit: f64 },
    /// A loss matrix that is not a valid loss (negative entries or nonzero diagonal).
    #[error("loss matrix invalid: {reason}")]
    BadLoss { reason: String },
    /// Not enough probe lengths to assess any prefix (need >= 3 beyond t).
    #[error("probe grid too sparse: {probes} probes cannot assess any prefix with pad {m_pad}")]
    GridTooSparse { probes: usize, m_pad: usize },
    /// A parameter combination that cannot be run.
    #[error("bad configuration: {reason}")]
    BadConfig { reason: String },
    /// The requested barrier set is empty.
    #[error("barrier set is empty: {reason}")]
    EmptyBarrier { reason: String },
}

fn format_violations(list: &[ModelViolation]) -> String {
    let parts: Vec<String> = list.iter().map(|v| v.to_string()).collect();
    parts.join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
