//! Simulated object-search trials, the benchmark matrix and the hierarchical demo.

pub mod bench;
pub mod error;
pub mod hier_demo;
pub mod report;
pub mod scene;
pub mod trial;
pub mod world;

pub use error::{Result, SimError};
pub use trial::{run_trial, PriorKind, TrialMetrics, TrialSpec};
pub use world::{make_world, ScenarioConfig, SimWorld};
