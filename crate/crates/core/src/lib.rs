//! Incentive design laboratory.
//!
//! A centralized incentive designer learns a parameterized incentive function
//! by differentiating its objective through the learning updates of
//! independent reinforcement-learning agents. The crate provides the
//! differentiation engine, small dense networks, agent learners, designer
//! implementations, the Escape Room and Gather-Trade-Build environments, and
//! the experiment harness.

pub mod agents;
pub mod designers;
pub mod diffgraph;
pub mod env;
pub mod harness;
pub mod nets;
