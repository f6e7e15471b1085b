//! Training engine for hierarchical recurrent networks in which top-down
//! gradient flow is replaced by locally computable auxiliary losses, enabling
//! a streaming backward pass whose memory footprint is bounded by
//! `k + 2T/k` state vectors instead of `T`.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod hierarchy;
pub mod layers;
pub mod metrics;
pub mod tasks;
pub mod training;
pub mod error;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;
