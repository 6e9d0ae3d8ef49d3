//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Anything that can go wrong in data handling, model evaluation or training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands had incompatible shapes. Carries both shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A value failed validation (bad quaternion, negative interval, ...).
    Invalid(String),
    /// A numeric quantity left its legal domain (NaN loss, |rho| >= 1, ...).
    Numeric(String),
    /// Serialized model bytes could not be decoded.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{}: shape mismatch {}x{} vs {}x{}",
                op, lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::Invalid(msg) => write!(f, "invalid input: {}", msg),
            Error::Numeric(msg) => write!(f, "numeric error: {}", msg),
            Error::Format(msg) => write!(f, "format error: {}", msg),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
