//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Errors raised by core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes incompatible for an op; names the op and both shapes.
    ShapeMismatch {
        op: &'static str,
        detail: String,
    },
    /// A stated precondition was violated.
    Contract(String),
    /// An index group (neighbor list, pooling cell) was unexpectedly empty.
    DegenerateGroup {
        op: &'static str,
        group: usize,
    },
    /// Input data is structurally invalid.
    BadInput(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in `{op}`: {detail}")
            }
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::DegenerateGroup { op, group } => {
                write!(f, "empty index group {group} in `{op}`")
            }
            CoreError::BadInput(msg) => write!(f, "bad input: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, CoreError>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err($crate::error::CoreError::Contract(alloc::format!($($arg)*)));
        }
    };
}
pub(crate) use contract;
