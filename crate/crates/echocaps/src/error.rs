use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad command line, configuration or mismatched inputs.
    #[error("usage: {0}")]
    Usage(String),
    /// Missing or inconsistent data.
    #[error("data: {0}")]
    Data(String),
    /// Malformed file contents; `offset` is the byte position when known.
    #[error("format: {}: {}{message}", path.display(), offset.map(|o| format!("at byte {o}: ")).unwrap_or_default())]
    Format {
        path: PathBuf,
        offset: Option<u64>,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] echocaps_core::Error),
}

impl Error {
    /// Process exit code: 1 for usage errors, 2 for data and format errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Core(echocaps_core::Error::Config(_) | echocaps_core::Error::Argument(_)) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        offset: Option<u64>,
        message: impl Into<String>,
    ) -> Self {
        Self::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
