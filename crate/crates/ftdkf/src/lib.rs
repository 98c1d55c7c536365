//! Anti-delay distributed Kalman filtering over sensor networks with
//! time-varying transmission delays.
//!
//! The crate provides:
//! - linear target dynamics and sensor models with observability checks ([`model`]),
//! - communication topologies with classification and diameters ([`graph`]),
//! - finite-time consensus message passing with echo cancellation ([`consensus`]),
//! - a delayed-network simulator with time-stamped buffers ([`network`]),
//! - the anchored reprocessing filter ([`filter`]),
//! - matrix/vector-weighted optimal fusion ([`fusion`]),
//! - numeric covariance lower bounds and a maximum-allowable-delay
//!   calculator ([`bounds`]),
//! - centralized and drop-late reference estimators ([`baseline`]),
//! - scenario loading, Monte-Carlo orchestration and CSV metrics
//!   ([`scenario`], [`sim`], [`metrics`]).

pub mod baseline;
pub mod bounds;
pub mod consensus;
pub mod error;
pub mod filter;
pub mod fusion;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod network;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::Error;
