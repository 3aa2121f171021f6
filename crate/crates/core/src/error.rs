use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("class counts sum to zero")]
    ZeroTotal,
    #[error("no devices in federation")]
    EmptyFederation,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("degenerate selection problem: {0}")]
    DegenerateProblem(String),
    #[error("no feasible (0,1) pair: selection vector is all zeros or all ones")]
    NoFeasiblePair,
    #[error("candidate batch sizes differ ({first} vs {other}) and the relaxed policy is off")]
    UnequalBatchSizes { first: u64, other: u64 },
    #[error("instance too large for exhaustive search: {subsets} subsets exceeds cap {cap}")]
    InstanceTooLarge { subsets: u128, cap: u128 },
    #[error("malformed instance: {0}")]
    MalformedInstance(String),
    #[error("unknown sampler '{0}' (expected gbp-cs, random, mc, brute or ga)")]
    UnknownSampler(String),
    #[error("unknown initializer '{0}' (expected mpinv, zero or random)")]
    UnknownInitializer(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("empty model set")]
    EmptySet,

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("stream exhausted")]
    StreamExhausted,
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),

    #[error("i/o error on {path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
