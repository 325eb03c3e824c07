//! Errors raised by passes before they touch their input.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PassError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dictionary exhausted: {needed} identifiers but only {available} usable entries")]
    DictionaryExhausted { needed: usize, available: usize },
}
