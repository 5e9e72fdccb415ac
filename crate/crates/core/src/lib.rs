//! Weighted first-order knowledge base for grasp-affordance reasoning.
//!
//! The pipeline: parse a schema, rules and evidence worlds ([`logic`]),
//! ground the rules ([`grounder`]), learn rule weights by maximising the
//! pseudo-log-likelihood ([`learner`]), answer affordance/region queries by
//! Gibbs sampling ([`sampler`]), project the winning region onto a point
//! cloud as a grasp pose ([`patches`]) and score predictions ([`metrics`]).
//! [`exact`] enumerates small models exactly and serves as the reference
//! for everything stochastic.

pub mod dataset;
pub mod error;
pub mod exact;
pub mod grounder;
pub mod learner;
pub mod logic;
pub mod metrics;
pub mod model;
pub mod par;
pub mod patches;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
