use std::path::PathBuf;

/// Failures of the file formats and command-line workflows.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("missing input: {0}")]
    Missing(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] spotmatch_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable, machine-parsable failure class.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Json { .. } | Self::Csv { .. } | Self::Format { .. } => "format",
            Self::Missing(_) => "missing-input",
            Self::Config(_) => "config",
            Self::Core(spotmatch_core::Error::Diverged { .. }) => "diverged",
            Self::Core(spotmatch_core::Error::NonFiniteGradient(_)) => "diverged",
            Self::Core(_) => "invalid",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Self::Missing(path.display().to_string());
        }
        Self::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Self::Format { path: path.into(), detail: detail.into() }
    }
}
