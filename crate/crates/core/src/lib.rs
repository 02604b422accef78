//! Deterministic, time-stepped agent-based simulation of priority-based
//! broadcast among mobile and static wireless entities on a torus.
//!
//! The crate is organized bottom-up:
//!
//! - [`rng`]: keyed counter-based random draws;
//! - [`geometry`]: torus arithmetic and the spatial grid index;
//! - [`mobility`]: Random Waypoint and static movement;
//! - [`protocol`]: origination, forwarding decisions and duplicate caches;
//! - [`metrics`]: per-step counters, summaries and statistics;
//! - [`engine`]: the partitioned, parallel step loop with adaptive migration;
//! - [`oracle`]: an independent brute-force reference simulator;
//! - [`config`] and [`cli`]: run configuration, presets and the front end.

pub mod cli;
pub mod config;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod mobility;
pub mod oracle;
pub mod protocol;
pub mod rng;

pub use config::{MigrationPolicy, Partitioning, Preset, SimConfig};
pub use engine::{run, run_with, RunOptions, RunOutput};
pub use geometry::{torus_distance, EntityId, Position, SpatialIndex, WorldSpec};
pub use metrics::{MetricsFrame, MetricsSeries, RunSummary, SpeedupReport};
pub use oracle::{oracle_run, OracleOutput};
pub use protocol::{CachePolicy, MessageId, ProtocolParams, Transmission};
pub use rng::DecisionStream;
