//! Desk-scale pipeline for live-streaming CTR training mechanics: a
//! deterministic session simulator with highlight moments, a streaming
//! label-assembly engine with three report policies, an online multi-task
//! trainer with positive-unlabeled and first-only-mask objectives,
//! cross-domain sequence features, and the evaluation surface that compares
//! how fast each policy detects CTR-increasing rooms.

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod seq;
pub mod sim;
pub mod streaming;
pub mod types;

pub mod config;
pub mod pipeline;

pub use error::{Error, Result};
