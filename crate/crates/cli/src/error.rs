use serde::Serialize;

/// Failure categories with stable process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {message}")]
    Config { message: String, paths: Vec<String> },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct Report<'a> {
    kind: &'a str,
    exit_code: i32,
    message: String,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    paths: &'a [String],
}

impl CliError {
    pub fn config(message: impl Into<String>, paths: Vec<String>) -> Self {
        CliError::Config {
            message: message.into(),
            paths,
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::Data(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON error report.
    pub fn to_json(&self) -> String {
        let paths: &[String] = match self {
            CliError::Config { paths, .. } => paths,
            _ => &[],
        };
        serde_json::to_string(&Report {
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            paths,
        })
        .expect("error report serializes")
    }
}

impl From<focal_core::Error> for CliError {
    fn from(e: focal_core::Error) -> Self {
        if e.is_numerical() || matches!(e, focal_core::Error::TooManyFailures { .. }) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}
