use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error surfaced from, used to tag failures of the
/// end-to-end answer path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    Prompt,
    Generation,
    Selection,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Retrieval => "retrieval",
            Stage::Prompt => "prompt",
            Stage::Generation => "generation",
            Stage::Selection => "selection",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("knowledge base at {0} is locked by another writer")]
    Locked(PathBuf),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("projection produced a zero vector")]
    DegenerateProjection,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("generator unavailable: {0}")]
    GeneratorUnavailable(String),

    #[error("audio decode error: {0}")]
    AudioDecode(String),

    #[error("silent input: {0} has zero power")]
    SilentInput(&'static str),

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("training diverged: {0}")]
    NonFiniteLoss(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Errors caused by a remote backend being down or slow; callers may retry.
    pub fn is_unavailable(&self) -> bool {
        matches!(
            self.root(),
            Error::EncoderUnavailable(_) | Error::GeneratorUnavailable(_)
        )
    }
}
