//! Staged feature-rollout decision engine.
//!
//! A rollout exposes a growing share of units to a new feature while an
//! always-valid sequential test watches guardrail metrics. The controller
//! combines three ingredients:
//!
//! - `stats`: streaming accumulation, naive and delete-a-group jackknife
//!   variance, the mixture sequential test, and power approximations;
//! - `rampup`: time-based, power-based, and risk-based policies that
//!   recommend the next treatment share;
//! - `controller`: the decision loop (stay / ramp / revert / complete) with
//!   sticky hashed assignment and resumable snapshots.
//!
//! `sim` generates synthetic populations to measure error rates, detection
//! latency, and harm incurred by a full rollout configuration.

pub mod controller;
pub mod error;
pub mod hash;
pub mod rampup;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
