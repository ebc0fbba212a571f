//! Staged trees, chain event graphs and semi-Markov failure models with
//! remedial interventions: simulation, Bayesian fitting and structure
//! selection.

pub mod error;
pub mod experiment;
pub mod formats;
pub mod inference;
pub mod intervention;
pub mod rng;
pub mod semi_markov;
pub mod structure;
pub mod tree;

pub use error::{CegError, Result};
pub use intervention::{InterventionIndicator, RemedyClass, RemedySpec};
pub use semi_markov::{Dataset, HoldingTimeLaw, SemiMarkovModel};
pub use tree::{ChainEventGraph, EventTree, StagePartition, StagedTree};
