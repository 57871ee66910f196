use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid value for `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("environment error: {0}")]
    Env(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
