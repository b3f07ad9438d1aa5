use thiserror::Error;
use wmera_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// A step ran before the one it depends on.
    #[error("missing artifact: {what} (run `{step}` first)")]
    Missing { what: String, step: &'static str },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;
pub const EXIT_STATE: i32 = 6;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Missing { .. } => EXIT_STATE,
            CliError::Core(e) => match e {
                CoreError::Io(_) => EXIT_IO,
                CoreError::Argument(_) => EXIT_CONFIG,
                CoreError::Dimension(_) | CoreError::Format { .. } | CoreError::Data(_) => EXIT_DATA,
                CoreError::Numeric(_) => EXIT_NUMERIC,
                CoreError::State(_) => EXIT_STATE,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}
