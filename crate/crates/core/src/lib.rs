//! Patient-feature-value triplet graphs and a two-layer residual graph
//! convolutional network for binary clinical risk prediction.
//!
//! The pipeline:
//!
//! 1. [`schema`] parses typed `(patient, feature, value)` triplets.
//! 2. [`preprocess`] fits median/standardization/effect-coding/mode
//!    statistics on the training split and imputes every gap.
//! 3. [`graph`] builds the bipartite patient/feature adjacency with
//!    self-loops and normalizes it as `D^{-1/2} Â D^{-1/2}`.
//! 4. [`model`] initializes node states, runs two GCN layers (the second
//!    residual) and an MLP head.
//! 5. [`train`] optimizes focal loss with exact gradients and Adam.
//! 6. [`metrics`] and [`baselines`] evaluate it against a KNN baseline.

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod schema;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use graph::{BipartiteGraph, GraphOptions, SparseMatrix};
pub use metrics::{MetricsReport, Split};
pub use model::{ForwardOptions, ForwardTrace, Mode, ModelDims, ModelParams};
pub use preprocess::{PreprocessConfig, PreprocessStats, ProcessedCohort};
pub use schema::{Cohort, FeatureKind, FeatureSchema, FeatureSpec, RawValue, Triplet};
pub use synth::SynthConfig;
pub use train::{FocalLoss, TrainConfig, TrainedModel, TrainingHistory};
