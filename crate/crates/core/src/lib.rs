//! Simulation library for personalized federated 𝒳-armed bandits.
//!
//! Clients share a k-nary hierarchical partition of a box domain. In the
//! first stage they collaboratively eliminate cells of the averaged
//! objective through a server; below a transition depth each client runs a
//! personalized elimination that keeps the collaboratively surviving cells
//! protected and evaluates them with the shared (biased) global statistics.
//!
//! Module map:
//! - [`partition`]: cell addressing and geometry.
//! - [`objectives`]: shifted synthetic suites, noise, optimum oracles.
//! - [`fedcore`]: confidence bounds, thresholds, messages, elimination.
//! - [`pfpne`]: server and client state machines.
//! - [`harness`]: runs, variants, regret and communication accounting.
//! - [`config`] and [`report`]: experiment files in, CSV/JSON out.

pub mod config;
pub mod error;
pub mod fedcore;
pub mod harness;
pub mod objectives;
pub mod partition;
pub mod pfpne;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
