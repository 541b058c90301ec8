use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("empty interaction matrix after {0}")]
    EmptyMatrix(&'static str),

    #[error("insufficient candidates: need {needed}, have {available} ({context})")]
    InsufficientCandidates {
        needed: usize,
        available: usize,
        context: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("index out of range: {kind} {index} >= {bound}")]
    Index {
        kind: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("simulation run (t={budget}, e={run}) failed: {source}")]
    Simulation {
        budget: usize,
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("walk count overflow")]
    Overflow,

    #[error("search space too large: {0} allocations")]
    Capacity(u128),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
