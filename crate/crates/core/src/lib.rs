//! Consistent-group classification of multivariate time-series windows.
//!
//! The pipeline learns a compact representation (AECS) of every window with a
//! two-layer sequence autoencoder, groups the representations with agglomerative
//! clustering (choosing the distance measure by the modified Hubert statistic),
//! trains one classifier per consistent group and routes unseen groups to the
//! closest trained model.
//!
//! Module map:
//!
//! * [`metrics`], [`rng`], [`dataset`]: shared types and deterministic utilities.
//! * [`ingest`], [`synthetic`]: UAH-DriveSet parsing, windowing, splitting and a
//!   synthetic generator for desk-scale verification.
//! * [`autoenc`]: LSTM autoencoder with hand-written BPTT.
//! * [`distance`], [`cluster`], [`cgf`]: distance measures, hierarchical
//!   clustering, measure selection and consistent group formation.
//! * [`grouplearn`], [`mapping`]: per-group training and test-group routing.
//! * [`pipeline`]: configuration, persisted artifacts and the stage drivers used
//!   by the `cgf` binary.

pub mod archive;
pub mod autoenc;
pub mod cgf;
pub mod cluster;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod grouplearn;
pub mod ingest;
pub mod mapping;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod selftest;
pub mod synthetic;

pub use dataset::{AecsMatrix, ChannelStats, WindowMeta, WindowedDataset};
pub use distance::DistanceMeasureId;
pub use error::{Error, Result};
pub use metrics::{evaluate_metrics, ClassMetrics};

/// Tolerance used by tests for results that are exact up to rounding.
pub const EXACT_TOL: f64 = 1e-9;
