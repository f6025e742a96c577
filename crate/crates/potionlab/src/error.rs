//! Crate-wide error type. Library APIs return [`Result`]; the CLI maps
//! variants onto process exit codes.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A layer's declared input does not match what the previous layer
    /// produces (or the model input). Reports the first offending layer.
    #[error("layer {index} ({kind}): expected input of size {expected}, found {found}")]
    ShapeMismatch {
        index: usize,
        kind: String,
        expected: String,
        found: String,
    },

    /// Invalid configuration value; the message names the offending key.
    #[error("invalid config: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// A per-sample gradient contained NaN/inf.
    #[error("non-finite gradient at sample {sample}")]
    NonFiniteGradient { sample: usize },

    /// An operation received input it cannot meaningfully process
    /// (constant vector, empty selection, zero-norm output, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json ({context}): {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// A persisted artifact failed validation (checksum, magic, sizes).
    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    /// A benchmark phase failed; names the phase so scenario errors point at
    /// the stage (data, poison, train, oracle, unlearn, metrics) that broke.
    #[error("phase {phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// A metric's normaliser is zero, so the ratio is undefined.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Tags `source` with the benchmark phase it occurred in.
    pub fn phase(phase: &'static str, source: Error) -> Self {
        Error::Phase {
            phase,
            source: Box::new(source),
        }
    }
}
