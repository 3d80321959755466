//! Token-weighted transducer training.
//!
//! The crate computes exact conditional token probabilities `P(y_u | y_<u)` on a
//! transducer alignment lattice, turns them into confidence-derived token
//! weights, and trains small transducers with the resulting token-weighted
//! objective. Brute-force oracles for every quantity live in [`oracle`].

// NaN-rejecting checks are written as `!(x > 0.0)`, and the lattice recursions
// read best with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod ssl;
pub mod token_conditional;
pub mod train;
pub mod weighted_loss;

pub use error::{Error, Result};
pub use lattice::{LabelSequence, PosteriorLattice, Vocabulary};
