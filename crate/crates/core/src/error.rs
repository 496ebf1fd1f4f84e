use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("queue index {value} out of range for K = {k}")]
    BadQueueIndex { value: i32, k: usize },
    #[error("intensity table for queue {distance} lacks regime `{regime}`")]
    UnknownRegime { distance: usize, regime: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("crossed book: best bid {bid} >= best ask {ask} (ticks)")]
    CrossedBook { bid: i64, ask: i64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("degenerate law: lower and upper thresholds coincide at {0}")]
    DegenerateLaw(u32),
    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("matrix-geometric iteration did not converge after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("unstable QBD: spectral radius of R is {0}")]
    Unstable(f64),
    #[error("absorbing state: total event rate is zero")]
    Absorbing,
    #[error("no trades in window")]
    NoTrades,
    #[error("bad initial state: {0}")]
    BadInitial(String),
    #[error("path has no reference price moves")]
    NoMoves,
    #[error("input error at line {line}: {message}")]
    Input { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for bad input, 3 for model validity, 4 for non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } => 4,
            Error::UnknownRegime { .. }
            | Error::InvalidModel(_)
            | Error::DegenerateLaw(_)
            | Error::NonErgodic(_)
            | Error::AssumptionViolated(_)
            | Error::Unstable(_)
            | Error::Absorbing
            | Error::NoTrades
            | Error::NoMoves => 3,
            _ => 2,
        }
    }

    /// Variant name used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadQueueIndex { .. } => "BadQueueIndex",
            Error::UnknownRegime { .. } => "UnknownRegime",
            Error::InvalidModel(_) => "InvalidModel",
            Error::CrossedBook { .. } => "CrossedBook",
            Error::InsufficientData(_) => "InsufficientData",
            Error::NoData(_) => "NoData",
            Error::DegenerateLaw(_) => "DegenerateLaw",
            Error::NonErgodic(_) => "NonErgodic",
            Error::AssumptionViolated(_) => "AssumptionViolated",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::Unstable(_) => "Unstable",
            Error::Absorbing => "Absorbing",
            Error::NoTrades => "NoTrades",
            Error::BadInitial(_) => "BadInitial",
            Error::NoMoves => "NoMoves",
            Error::Input { .. } => "Input",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
