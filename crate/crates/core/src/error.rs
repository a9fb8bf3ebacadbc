use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entry ({row},{col}) outside declared dimensions {m}x{n}")]
    IndexOutOfRange { row: usize, col: usize, m: usize, n: usize },

    #[error("non-finite value {value} at ({row},{col})")]
    NonFiniteValue { row: usize, col: usize, value: f64 },

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("empty stream with sample budget {s}")]
    EmptyStream { s: u64 },

    #[error("nonpositive or non-finite weight {weight} at stream position {position}")]
    BadWeight { position: u64, weight: f64 },

    #[error("probability {p} outside [0,1]")]
    BadProbability { p: f64 },

    #[error("hypergeometric parameters out of range: s={s}, l={l}, k={k}")]
    BadHypergeometric { s: u64, l: u64, k: u64 },

    #[error("zeta must be positive, got {zeta}")]
    NonPositiveZeta { zeta: f64 },

    #[error("all row weights are zero; no sampleable entries")]
    AllRowsZero,

    #[error("row {row} has zero profile weight but the stream contains an entry there")]
    ProfileMismatch { row: usize },

    #[error("entry ({row},{col}) has zero sampling probability under the plan")]
    ZeroProbabilityEntry { row: usize, col: usize },

    #[error("trim threshold {theta} removes every nonzero entry")]
    TrimKillsAll { theta: f64 },

    #[error("unknown sampling scheme `{name}`")]
    UnknownScheme { name: String },

    #[error("column L1 maxima were not tracked; Definition-1 condition 1 unavailable")]
    MissingColumnMaxima,

    #[error("invalid parameter: {what}")]
    InvalidParameter { what: String },

    #[error("dense materialization guard exceeded: {m}x{n} > {limit} cells")]
    DenseGuard { m: usize, n: usize, limit: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: String, got: String },

    #[error("sketch decode error at byte {offset}: {what}")]
    Decode { offset: usize, what: String },

    #[error("{path}:{line}: matrix market parse error: {what}")]
    MatrixMarket { path: String, line: usize, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
