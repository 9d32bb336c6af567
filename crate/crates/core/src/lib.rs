//! Pipeline-parallel schedule construction, simulation and staleness analysis.
//!
//! The crate is organised as a small pipeline:
//!
//! * [`model`] holds the shared domain types and validators.
//! * [`builder`] turns a [`PolicyConfig`] and [`ClusterSpec`] into a [`TaskGraph`].
//! * [`engine`] executes a graph into a [`Timeline`] under per-device FIFO dispatch.
//! * [`analysis`] measures mismatch, windows, memory and communication volume.
//! * [`delay`] is a numerical harness for bounded-delay optimizers.
//! * [`suite`] bundles the property checks used by `verify` and the tests.

pub mod analysis;
pub mod builder;
pub mod delay;
pub mod engine;
pub mod export;
pub mod model;
pub mod suite;
pub mod time;

pub use builder::{
    active_ratio, build, default_num_pipelines, map_stage_to_device, preload_count, BuildError,
    Task, TaskGraph,
};
pub use engine::{bubble_ratio, simulate, simulate_with, EngineError};
pub use model::{
    validate_causality, validate_cluster, CausalRule, CausalityViolation, ClusterSpec,
    ClusterViolation, CommModel, MemoryModel, MismatchEntry, MismatchReport, Policy, PolicyConfig,
    TaskEvent, TaskKind, Timeline,
};
pub use time::{Ratio, Time};
