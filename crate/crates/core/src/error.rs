//! Crate-wide error type.
//!
//! Errors are grouped by how the CLI maps them to exit codes: configuration,
//! shape, lookup, contract and format errors are validation failures (exit 1);
//! numeric and I/O errors are runtime failures (exit 2).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or malformed config input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes do not conform for the requested operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Unknown concept, parameter or key.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// An operation precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed persisted data (checkpoint, tensor bytes, ballots).
    #[error("format error: {0}")]
    Format(String),

    /// Non-finite values or numeric breakdown at runtime.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI should report for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Shape { .. }
            | Error::Lookup(_)
            | Error::Contract(_)
            | Error::Format(_) => 1,
            Error::Numeric(_) | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
