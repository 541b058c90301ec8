//! Laboratory for target-user injection attacks on collaborative filtering.
//!
//! The pipeline estimates how each target user's top-K hit probability
//! responds to a number of injected fake users (by surrogate simulation or by
//! a three-order path-count proxy), allocates a global fake-user budget by
//! group-knapsack dynamic programming, generates the fake profiles, and
//! measures the attack (and detector-based defenses) on a retrained victim.

pub mod allocator;
pub mod attackers;
pub mod cf;
pub mod dataset;
pub mod defense;
pub mod error;
pub mod evaluator;
pub mod orchestrator;
pub mod pathcount;
pub mod seed;
pub mod uplift;

pub use error::{Error, Result};
