//! Stochastic population processes on weighted interaction networks.
//!
//! Agents hold a state from a finite set and revise it at the rings of
//! independent Poisson clocks, with transition probabilities that depend on
//! a weighted local average of the other agents' states. The crate provides
//! exact simulation, the classical and N-intertwined mean-field
//! approximations, and exact small-system oracles (generator matrix,
//! transient marginals, martingale residuals).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod interaction;
pub mod meanfield;
pub mod oracle;
pub mod rng;
pub mod simulator;

pub use dynamics::{
    MixedProfile, PopulationModel, PopulationState, RateFunction, RatePolicy, StateSpace, Utility,
};
pub use error::{Error, Result};
pub use interaction::InteractionMatrix;
pub use meanfield::OdeSolution;
pub use oracle::{DeviationRecord, GeneratorMatrix};
pub use simulator::{EnsembleStats, Event, Trajectory};
