use std::fmt;

/// Which exit status an error maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Unreadable or malformed configuration: exit 1.
    Config,
    /// A computation rejected its inputs, or an upstream artifact is missing: exit 2.
    Validation,
}

/// An error tagged with the pipeline stage and the config key it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunError {
    pub class: ErrorClass,
    pub stage: String,
    pub key: String,
    pub message: String,
}

impl RunError {
    pub fn config(stage: &str, key: &str, message: impl fmt::Display) -> Self {
        RunError {
            class: ErrorClass::Config,
            stage: stage.into(),
            key: key.into(),
            message: message.to_string(),
        }
    }

    pub fn validation(stage: &str, key: &str, message: impl fmt::Display) -> Self {
        RunError {
            class: ErrorClass::Validation,
            stage: stage.into(),
            key: key.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Config => 1,
            ErrorClass::Validation => 2,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.stage, self.key, self.message)
    }
}

impl std::error::Error for RunError {}
