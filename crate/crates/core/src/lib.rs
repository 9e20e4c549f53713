//! Classification losses in a curved label space.
//!
//! One-hot labels make every pair of classes equally far apart. This crate
//! equips label space with a metric tensor whose off-diagonal entries
//! stretch or shrink individual class-pair distances, provides curved
//! variants of squared error and cross-entropy with analytic gradients, and
//! derives the metric from an exponential moving average of the model's
//! own confusion statistics. A small dense softmax network and a
//! hierarchical synthetic data generator make the pieces trainable end to
//! end.

pub mod confusion;
pub mod data;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod metric;
pub mod net;

pub use confusion::{
    build_metric, effective_distance, ema_update, metric_from_history, ConfusionAccumulator,
    EmaState, MetricConfig, NormalizedConfusion,
};
pub use data::{Dataset, HierarchySpec};
pub use error::{Error, Result};
pub use losses::{LossGradient, LossKind, LOG_CLAMP};
pub use matrix::SquareMatrix;
pub use metric::{
    class_pair_sq_distance, curved_sq_distance, distance_report, euclidean_sq_distance,
    DistanceTable, Metric, MetricFile, OneHotLabel, ProbVector,
};
pub use net::{Batch, Gradients, Network, NetworkCheckpoint, TrainState};
