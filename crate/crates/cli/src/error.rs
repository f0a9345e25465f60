use std::fmt;

/// Process exit codes, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Other = 1,
    Config = 2,
    MissingArtifact = 3,
    Numeric = 4,
    Schema = 5,
    Conflict = 6,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(ExitKind::MissingArtifact, message)
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Schema, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Conflict, message)
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<sscl_core::Error> for CliError {
    fn from(e: sscl_core::Error) -> Self {
        use sscl_core::Error as E;
        let kind = match &e {
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ExitKind::MissingArtifact,
            E::Io { .. } => ExitKind::Other,
            E::InvalidArgument(_) | E::EmptyVocabulary { .. } | E::BatchTooSmall(_) | E::EmptyFilteredSet => {
                ExitKind::Config
            }
            E::NonFinite { .. } | E::ZeroNorm(_) | E::EmptyCluster { .. } => ExitKind::Numeric,
            E::Parse { .. }
            | E::Schema(_)
            | E::Json(_)
            | E::DimensionMismatch { .. }
            | E::ShapeMismatch { .. }
            | E::NothingMapped
            | E::EmptyCorpus => ExitKind::Schema,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<map_server::ServeError> for CliError {
    fn from(e: map_server::ServeError) -> Self {
        use map_server::{ServeError, SessionError};
        match e {
            ServeError::Session(SessionError::Core(inner)) => inner.into(),
            ServeError::Session(other) => Self::schema(other.to_string()),
            ServeError::Io(io) => Self::new(ExitKind::Other, io.to_string()),
        }
    }
}
