use thiserror::Error;

use jumpctl_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration and model errors, 3 for resource caps, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                CoreError::ResourceCap(_) | CoreError::RegenerationCap { .. } => 3,
                CoreError::BlowUp { .. } | CoreError::NonConvergence { .. } | CoreError::PolicyLookup { .. } => 4,
                CoreError::Syntax { .. }
                | CoreError::Semantic(_)
                | CoreError::InvalidArgument(_)
                | CoreError::NonLatticeDensity(_) => 2,
            },
        }
    }
}
