use std::fmt;

use hdrvqa_core::Error;

/// A failure reported as `error[CLASS]: detail` on one line.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub detail: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(class: &'static str, detail: impl Into<String>) -> Self {
        CliError {
            class,
            detail: detail.into(),
        }
    }

    pub fn usage(detail: impl Into<String>) -> Self {
        CliError::new("USAGE", detail)
    }

    pub fn config(detail: impl Into<String>) -> Self {
        CliError::new("CONFIG_INVALID", detail)
    }

    /// Missing artifacts and bad invocations exit with 2, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self.class {
            "USAGE" | "CKPT_NOT_FOUND" | "INPUT_NOT_FOUND" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let detail: String = self.detail.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {}", self.class, detail)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let class = match &e {
            Error::Io { .. } => "IO_ERROR",
            Error::NotFound(_) => "INPUT_NOT_FOUND",
            Error::Config(_) => "CONFIG_INVALID",
            Error::Version { .. } => "VERSION_MISMATCH",
            Error::Corrupted { .. } => "CORRUPTED_FILE",
            Error::Checkpoint(_) => "CKPT_INVALID",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::MissingFeatures(_) => "MISSING_FEATURES",
            Error::NonFiniteLoss { .. } => "NON_FINITE_LOSS",
            Error::Encoder(_) => "ENCODER_FAILED",
            Error::Serialization(_) => "PARSE_ERROR",
            Error::Geometry(_) | Error::Layout { .. } => "BAD_GEOMETRY",
            _ => "INVALID_INPUT",
        };
        CliError::new(class, e.to_string())
    }
}

/// Reclassifies errors raised while loading a checkpoint.
pub fn ckpt_error(e: Error) -> CliError {
    match e {
        Error::NotFound(p) => CliError::new("CKPT_NOT_FOUND", format!("checkpoint not found: {}", p.display())),
        Error::Corrupted { .. } | Error::Version { .. } => CliError::new("CKPT_INVALID", e.to_string()),
        e => e.into(),
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("PARSE_ERROR", e.to_string())
    }
}
