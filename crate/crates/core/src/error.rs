use std::fmt;
use std::path::PathBuf;

/// A single configuration problem, tied to the key that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub key: String,
    pub message: String,
}

impl ConfigViolation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CurateError {
    #[error("invalid configuration:{}", format_violations(.0))]
    Config(Vec<ConfigViolation>),

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("duplicate document id {id:?} (line {line})")]
    DuplicateId { id: String, line: usize },

    #[error("document {id:?} has no quality score; run the scoring classifier before the quality stage")]
    MissingScore { id: String },

    #[error("sketch mismatch: {0}")]
    SketchMismatch(String),

    #[error("pipeline state: {0}")]
    PipelineState(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("write failed ({source}); partial output left at {partial}")]
    PartialOutput {
        partial: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(|v| format!("\n  {v}")).collect()
}

impl CurateError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CurateError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CurateError::Config(vec![ConfigViolation::new(key, message)])
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CurateError::Config(_) | CurateError::MissingScore { .. } | CurateError::SketchMismatch(_) => 2,
            CurateError::Io { .. } | CurateError::PartialOutput { .. } => 3,
            CurateError::Malformed { .. } | CurateError::DuplicateId { .. } => 4,
            CurateError::PipelineState(_) | CurateError::Invariant(_) => 1,
        }
    }
}

pub type Result<T, E = CurateError> = std::result::Result<T, E>;
