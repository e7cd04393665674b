use std::path::{Path, PathBuf};

use digmn_core::Error as CoreError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Io = 3,
    Numeric = 4,
    Compatibility = 5,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed input: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<CliError>,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, message: impl ToString) -> Self {
        CliError::Parse { path: path.to_path_buf(), message: message.to_string() }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        CliError::Context { context: context.into(), source: Box::new(self) }
    }

    pub fn kind(&self) -> ExitKind {
        match self {
            CliError::Config(_) => ExitKind::Config,
            CliError::Io { .. } | CliError::Parse { .. } => ExitKind::Io,
            CliError::Core(e) => core_kind(e),
            CliError::Context { source, .. } => source.kind(),
        }
    }
}

fn core_kind(e: &CoreError) -> ExitKind {
    match e {
        CoreError::InvalidConfig { .. } | CoreError::InvalidArgument(_) | CoreError::EmptyInput(_) => ExitKind::Config,
        CoreError::NonFinite(_) | CoreError::SingleClass => ExitKind::Numeric,
        CoreError::ShapeMismatch { .. }
        | CoreError::StaleCache(_)
        | CoreError::Incompatible(_)
        | CoreError::LabelOutOfRange { .. } => ExitKind::Compatibility,
        CoreError::EmptySession | CoreError::InvalidWindow | CoreError::ZeroVector => ExitKind::Io,
    }
}
