use thiserror::Error;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("diagnostic failed: {0}")]
    Diagnostic(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
            Self::Diagnostic(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::Runtime(format!("{}: {err}", path.display()))
    }
}

/// Core errors raised before any iteration runs are configuration problems;
/// everything else is a runtime failure.
impl From<mines::Error> for CliError {
    fn from(e: mines::Error) -> Self {
        use mines::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::InvalidBand { .. }
            | E::TheoryModeNeedsOracle
            | E::OracleRequired(_)
            | E::DimensionMismatch { .. }
            | E::EmptySpectrum
            | E::NonPositiveEigenvalue { .. }
            | E::NonPositiveTemp(_)
            | E::BadLabel { .. }
            | E::Parse { .. }
            | E::EmptyFile
            | E::Io { .. } => Self::Config(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
