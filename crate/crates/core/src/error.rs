use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn domain_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        op,
        detail: detail.into(),
    }
}
