//! Symmetry-reduced physics-informed learning of tensegrity dynamics.
//!
//! The pipeline: assemble the structural operators ([`structure`]), detect
//! the node permutation and spatial transform that leave the structure
//! invariant and build the invariant subspace basis ([`symmetry`]), reduce
//! and integrate the equations of motion ([`dynamics`]), then fit a
//! hard-constrained network of the reduced coordinates ([`net`], [`train`]).

pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod structure;
pub mod symmetry;
pub mod train;

pub use error::{Result, TsgError};
