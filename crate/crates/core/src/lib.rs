//! Differentiable permutation learning with Gumbel-Sinkhorn sampling and
//! entropy-adaptive inverse temperatures.
//!
//! A soft permutation `P = Sinkhorn(β ⊙ (S + g))` is trained per instance by
//! minimising a structural loss on the reordered data `Pᵀ X`. With a global
//! schedule `β` is a scalar; the adaptive controller instead derives one
//! inverse temperature per row and column from the entropy of the noise-free
//! assignment, cooling the rows that are still ambiguous.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod decode;
mod error;
pub mod sinkhorn;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
