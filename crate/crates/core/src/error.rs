use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("missing id `{0}`")]
    MissingId(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty vocabulary after pruning (min_df = {min_df}); lower min_df or supply more training text")]
    EmptyVocabulary { min_df: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite score at label index {0}")]
    NonFiniteScore(usize),

    #[error("unsupported format version: file has {found}, this build reads {supported}")]
    Version { found: u32, supported: u32 },

    #[error("parse error at line {line}, column {column} (byte offset {offset}): {message}")]
    Json {
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a serde_json error, computing the byte offset of the failure in `input`.
    pub fn json(err: serde_json::Error, input: &str) -> Self {
        let (line, column) = (err.line(), err.column());
        let offset = byte_offset(input, line, column);
        Error::Json {
            line,
            column,
            offset,
            message: err.to_string(),
        }
    }

    /// Short stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingColumn { .. } => "schema",
            Error::Row { .. } => "row",
            Error::DuplicateId(_) => "duplicate_id",
            Error::MissingId(_) => "missing_id",
            Error::Config(_) => "config",
            Error::InvalidInput(_) => "invalid_input",
            Error::EmptyVocabulary { .. } => "empty_vocabulary",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFiniteScore(_) => "non_finite_score",
            Error::Version { .. } => "version",
            Error::Json { .. } => "parse",
            Error::Csv(_) => "csv",
        }
    }
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in input.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    input.len()
}
