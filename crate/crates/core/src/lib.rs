//! Simulation and learning engine for maximizing ground-user connectivity
//! with a fleet of UAV base stations.
//!
//! The building blocks, bottom-up:
//!
//! - [`gridworld`]: grid, UAV motion, user layouts
//! - [`radio`]: path loss, SINR, RB demand
//! - [`association`]: two-stage user admission producing the connectivity matrix
//! - [`rewards`]: per-level agent rewards
//! - [`neural`]: Q-networks, replay, double-DQN updates
//! - [`ducm1`] / [`ducm2`]: multi-agent trainers for a fixed and a changing fleet
//! - [`oracle`]: brute-force optimal placement
//! - [`harness`]: configuration, metrics, checkpoints, suites and plots

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod ducm1;
pub mod ducm2;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod neural;
pub mod oracle;
pub mod radio;
pub mod rewards;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use association::AssociationResult;
pub use gridworld::{Action, GridPos, GridSpec, Point, UserLayout};
pub use harness::{Checkpoint, MetricsRow, RunConfig};
pub use neural::{Experience, Mlp};
pub use radio::ChannelParams;
pub use scenario::Scenario;
