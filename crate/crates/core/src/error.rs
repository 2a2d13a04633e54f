use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration at `{key}`: {message}")]
    Config { key: String, message: String },

    /// Dataset or input validation failure, tagged with the patient and field
    /// at fault when known.
    #[error("validation failed{}: {message}", location(.patient, .field))]
    Validation {
        patient: Option<String>,
        field: Option<String>,
        message: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn location(patient: &Option<String>, field: &Option<String>) -> String {
    match (patient, field) {
        (Some(p), Some(f)) => format!(" (patient {p}, {f})"),
        (Some(p), None) => format!(" (patient {p})"),
        (None, Some(f)) => format!(" ({f})"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            patient: None,
            field: None,
            message: message.into(),
        }
    }

    pub fn patient(patient: &str, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            patient: Some(patient.to_string()),
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
