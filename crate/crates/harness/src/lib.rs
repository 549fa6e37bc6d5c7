//! Experiment harness for the grasp tracker: protocols, outputs, the
//! throughput benchmark, dataset export and the live telemetry bridge.

pub mod bench;
pub mod bridge;
pub mod config;
pub mod dataset;
pub mod episode;
pub mod output;
pub mod protocols;
pub mod stats;
