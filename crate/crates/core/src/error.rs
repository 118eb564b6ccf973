use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{column}` must take exactly two values, found {found}")]
    NotBinary { column: String, found: usize },
    #[error("cannot parse `{value}` as a number in column `{column}` (data row {row})")]
    BadNumber {
        column: String,
        value: String,
        row: usize,
    },
    #[error("dataset has no rows")]
    NoRows,
    #[error("unusable split: {0}")]
    DegenerateSplit(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("token budget {budget} is smaller than the first statement ({needed} tokens)")]
    Budget { budget: usize, needed: usize },
    #[error("value `{0}` is not part of the flip pair")]
    FlipValue(String),
    #[error("sequence of {len} tokens exceeds the context size {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("adapter error: {0}")]
    Adapter(String),
    #[error("group {0} has no rows")]
    MissingGroup(u8),
    #[error("undefined rate: {0}")]
    UndefinedRate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid QA pair: {0}")]
    Qa(String),
}

pub type Result<T> = core::result::Result<T, Error>;
