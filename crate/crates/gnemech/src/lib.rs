//! Simulator and verification suite for a budget-balanced mechanism that
//! coordinates misinformation filtering between competing platforms and a
//! government regulator.
//!
//! The crate models the filtering game, implements the taxation mechanism
//! (standard and extended price-allocation variants), solves the centralized
//! welfare problem, constructs and verifies generalized Nash equilibria of
//! the induced game, and exposes everything through the `gnemech` binary.

pub mod equilibrium;
pub mod fixtures;
pub mod mechanism;
pub mod model;
pub mod planner;
pub mod verification;

pub mod cli;
