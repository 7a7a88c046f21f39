//! Partitioned low-rank adapters with frozen near-orthogonal blocks.
//!
//! A low-rank adapter `ΔW = W_up · W_down` is split along the feature
//! dimension: `W_up = [A; B]` and `W_down = [C, D]`, where `A` and `C` are
//! frozen blocks regenerable from a seed and `B`, `D` are trainable. With
//! disjoint (or near-orthogonal) frozen blocks, the top-left block of `ΔW`
//! vanishes and the remaining blocks carry separable roles: `BC` learns one
//! factor of variation, `AD` the other, `BD` their interaction.
//!
//! The crate provides:
//! - [`matcore`]: deterministic dense matrices and seeded randomness,
//! - [`plp`]: the partitioned adapter, break/make algebra, and merge baseline,
//! - [`synth`]: a compositional regression benchmark with brute-force oracles,
//! - [`train`]: losses, routed analytic gradients, and training procedures,
//! - [`diag`]: alignment metrics, 2D parameter projections, method comparison,
//! - [`format`]: versioned binary file formats for adapters and tasks.

pub mod diag;
mod error;
pub mod format;
pub mod matcore;
pub mod plp;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
