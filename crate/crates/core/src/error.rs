use thiserror::Error;

/// A single field or record failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("invalid decimal price {0:?} (at most 4 fraction digits)")]
    Decimal(String),
    #[error("invalid {field}: {value:?}")]
    Field { field: &'static str, value: String },
    #[error("missing required field {0}")]
    Missing(&'static str),
    #[error("expected {expected} fields, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("invalid json record: {0}")]
    Json(String),
}

/// A record parsed but violates a domain rule.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

/// Errors raised while reading an event stream, annotated with the 1-based
/// line number.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: ValidationError },
    #[error("bad header: expected {expected:?}")]
    Header { expected: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
