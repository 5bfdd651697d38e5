use std::path::PathBuf;

use thiserror::Error;

use crate::trace::TaskKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bundle incomplete: {0}")]
    BundleIncomplete(String),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("bundle carries no true labels")]
    NoLabels,

    #[error("not enough data: {0}")]
    NoData(String),

    #[error("class {0} is undefined (no member images)")]
    UndefinedClass(usize),

    #[error("pair ({0}, {1}) is undefined")]
    UndefinedPair(usize, usize),

    #[error("triplet ({0}, {1} | {2}) is undefined")]
    UndefinedTriplet(usize, usize, usize),

    #[error("triplet ({0}, {1} | {2}) is degenerate: both distances are zero")]
    DegenerateTriplet(usize, usize, usize),

    #[error("pair ({0}, {1}) has no retained third class after filtering")]
    NoRetainedTriplets(usize, usize),

    #[error("ground truth set is empty")]
    NoTruth,

    #[error("bundle has no last-layer weight vectors")]
    NoWeights,

    #[error("no neuron bounds profiled for class {0}")]
    NoBounds(usize),

    #[error("correlation undefined: an input is constant")]
    UndefinedCorrelation,

    #[error("at least two non-empty groups are required")]
    NoContrast,

    #[error("effect size undefined: pooled variance is zero")]
    UndefinedEffect,

    #[error("operation requires a {expected} bundle")]
    WrongTaskKind { expected: TaskKind },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Usage and precondition failures map to exit code 2, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
