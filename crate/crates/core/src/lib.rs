//! Finite-horizon restless bandits in which every arm may be pulled at most once.
//!
//! The crate covers the full pipeline: arm models and their dummy-state
//! expansion ([`model`]), occupancy-measure LP relaxations ([`lp`]), the
//! single-pull index policy and its baselines ([`policies`]), a
//! constraint-enforcing Monte Carlo simulator ([`sim`]), exact dynamic
//! programs for tiny instances ([`oracle`]) and instance generators for the
//! benchmark families ([`domains`]).

pub mod domains;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod policies;
pub mod rng;
pub mod sim;

pub use model::{expand_with_dummies, replicate, validate_arm, ArmModel, Instance, ModelError, ValidationReport};
