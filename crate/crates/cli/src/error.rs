use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration; exit code 2.
    Config(String),
    /// Training diverged; the last finite network was saved to `checkpoint`. Exit code 3.
    Diverged { message: String, checkpoint: PathBuf },
    /// Anything else; exit code 1.
    Other(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(e: impl fmt::Display) -> Self {
        CliError::Other(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Diverged { message, checkpoint } => {
                write!(f, "{message}\ncheckpoint written to {}", checkpoint.display())
            }
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<kmfg::Error> for CliError {
    fn from(e: kmfg::Error) -> Self {
        match e {
            kmfg::Error::Config(_) | kmfg::Error::Usage(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}
