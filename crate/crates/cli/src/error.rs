use std::fmt;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or arguments (exit 1).
    Usage(String),
    /// Malformed or inconsistent input data (exit 2).
    Data(String),
    /// Failure while running (exit 3).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<wsproute::Error> for CliError {
    fn from(e: wsproute::Error) -> Self {
        use wsproute::Error as E;
        match e {
            E::Diverged(_) | E::Diff(_) | E::Io(_) => Self::Runtime(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
