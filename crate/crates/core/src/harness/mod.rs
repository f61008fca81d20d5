//! Run configuration, metrics files, checkpoints, evaluation suites and plots.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod suite;

pub use checkpoint::{load_checkpoint, save_checkpoint, BestPolicies, Checkpoint, TrainerKind, FORMAT_VERSION};
pub use config::{Algorithm, Copy2Layout, RunConfig};
pub use metrics::{read_metrics, EpisodeKind, MetricsRow, MetricsWriter};
