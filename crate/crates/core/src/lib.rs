//! Closed-loop grasp tracking.
//!
//! Each frame the [`tracker::Tracker`] samples candidate grasps around the
//! current seed, evaluates them with a pluggable [`evaluator::Evaluator`],
//! scores them for quality and temporal consistency, and smooths the winner
//! into a controller target. Optional scene flow shifts the seed ahead of a
//! moving object.

pub mod cloud;
pub mod error;
pub mod evaluator;
pub mod flow;
pub mod gripper;
pub mod ply;
pub mod pose_filter;
pub mod rng;
pub mod sampler;
pub mod scoring;
pub mod se3;
pub mod tracker;

pub use error::{Error, Result};
pub use se3::Pose;
