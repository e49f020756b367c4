//! Crate-wide error type with CLI exit-code mapping.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Bad configuration or command usage (exit code 1).
    Config(String),
    /// Malformed or inconsistent input data (exit code 2).
    Data(String),
    /// Tensor shape mismatch (exit code 3).
    Shape(String),
    /// I/O failure, tagged with the offending path (exit code 3).
    Io(String, std::io::Error),
    /// Internal invariant violation (exit code 3).
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) => 2,
            Error::Shape(_) | Error::Io(_, _) | Error::Internal(_) => 3,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Io(path, err) => write!(f, "io error on {path}: {err}"),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
