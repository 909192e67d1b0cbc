use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },

    #[error("tensor is not recorded on the active tape")]
    NotOnTape,

    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("graph is not deterministic: two forward passes disagree")]
    NonDeterministic,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("dataset '{0}' not found in manifest")]
    UnknownDataset(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("episode rejected: {0}")]
    EpisodeRejected(RejectReason),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("episode rejection storm: {rejected} of last {window} draws rejected (step {step})")]
    RejectionStorm {
        step: usize,
        rejected: usize,
        window: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("bundled asset {name} failed checksum verification")]
    AssetChecksum { name: &'static str },
}

/// Why an episode draw was rejected; the trainer retries with the next
/// RNG substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Fewer than 2 distinct classes in the context (classification).
    TooFewClasses,
    /// Zero-variance target in the context (regression).
    ZeroVarianceTarget,
    /// No query rows survived class remapping.
    EmptyQuery,
    /// Not enough usable rows for the requested context + query sizes.
    TooFewRows,
    /// Task has more active features than the model width allows.
    TooManyFeatures,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectReason::TooFewClasses => "fewer than 2 distinct classes in context",
            RejectReason::ZeroVarianceTarget => "zero-variance regression target in context",
            RejectReason::EmptyQuery => "no query rows left after class remapping",
            RejectReason::TooFewRows => "not enough usable rows",
            RejectReason::TooManyFeatures => "active feature count exceeds model width",
        };
        f.write_str(s)
    }
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CoreError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
