use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("address {value:#x} out of range (capacity {capacity:#x} bytes)")]
    AddressOutOfRange { value: u64, capacity: u64 },

    #[error("coordinate field `{field}` = {value} exceeds its {width}-bit width")]
    CoordOverflow {
        field: &'static str,
        value: u64,
        width: u32,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("capacity exceeded: need {needed} bytes, have {available}")]
    Capacity { needed: u64, available: u64 },

    #[error("replay error at request #{seq}: {reason}")]
    Replay { seq: u64, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors that stem from a bad configuration or scenario.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Capacity { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
