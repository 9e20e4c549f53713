use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration or malformed input. Exit code 1.
    #[error("validation error: {0}")]
    Validation(String),
    /// Numerical failure or I/O trouble during a run. Exit code 2.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}

impl From<curved_label::Error> for HarnessError {
    fn from(e: curved_label::Error) -> Self {
        use curved_label::Error as E;
        match e {
            E::NonFinite(_) | E::NotInitialized(_) | E::Io(_) | E::Json(_) => {
                HarnessError::Runtime(e.to_string())
            }
            _ => HarnessError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
