//! Core machinery for robot-independent 3D multi-object search.
//!
//! The crate is organised bottom-up:
//!
//! - [`spatial`]: grid cells, region frames, camera poses, the frustum sensor and voxel ray traversal.
//! - [`occupancy`]: occupancy octrees built from point clouds, the feasible search region and the
//!   occupancy-based prior.
//! - [`belief`]: the per-object octree belief with exact sampling, Bayesian update and
//!   initialization over irregular regions.
//! - [`model`]: the multi-object search POMDP (states, actions, transition, observation, reward).
//! - [`view_graph`]: belief-dependent view position graphs that define the move actions.
//! - [`mcts`] and [`planner`]: partially observable UCT plus the random and greedy baselines.

pub mod belief;
pub mod cloud;
pub mod error;
pub mod mcts;
pub mod model;
pub mod occupancy;
pub mod planner;
pub mod spatial;
pub mod view_graph;

pub use error::{Error, Result};
