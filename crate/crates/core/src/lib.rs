//! Exact information-theoretic credit-assignment analysis for finite-horizon
//! tabular MDPs.
//!
//! The crate enumerates the trajectory distribution of a fixed behavior
//! policy and evaluates, exactly, how much information actions carry about
//! returns: per-pair return-distribution divergences, their occupancy
//! average (information sparsity), leave-one-out and history-conditioned
//! mutual information, hindsight ratios and directed information between
//! trajectories and return sequences. A seeded Monte Carlo path estimates
//! the same quantities from samples.

pub mod credit;
pub mod engine;
pub mod error;
pub mod info;
pub mod mc;
pub mod mdp;
pub mod report;

pub use error::{Error, Result};
