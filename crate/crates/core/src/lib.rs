//! Class-level confusion and bias inspection for image classifiers, driven by
//! recorded neuron activations.

pub mod bias;
pub mod cli;
pub mod confusion;
pub mod coverage;
pub mod error;
pub mod evaluator;
pub mod ground_truth;
pub mod pairs;
pub mod profiler;
pub mod stats;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
pub use pairs::{ClassPair, Detection, DetectionPolicy, Direction, PairScoreTable, PolicyKind};
pub use profiler::{ActivationProbabilityMatrix, ActivationThreshold};
pub use trace::{load_bundle, write_bundle, ClassGroups, Grouping, TaskKind, TraceBundle};
