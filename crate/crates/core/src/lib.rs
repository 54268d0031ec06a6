//! Invariant sets built from conserved quantities of ODE flows.
//!
//! The crate classifies states by the rank of the Jacobian of a vectorial
//! conserved quantity, by the vanishing of its higher partials, and checks
//! along integrated trajectories that these sets are invariant. It also
//! verifies that two gradient-driven systems share trajectories on the set
//! where the driving derivatives agree. Models: the planar Kepler problem,
//! periodic and non-periodic Toda lattices, and a harmonic oscillator.

pub mod coincidence;
pub mod differentiate;
pub mod error;
pub mod integrate;
pub mod invariance;
pub mod models;
pub mod rank_sets;
pub mod system;

pub use error::{Error, Result};
pub use system::{
    conservation_residual, evaluate_field, ConservedQuantitySet, MultiIndex, StateVector,
    SystemDefinition,
};
