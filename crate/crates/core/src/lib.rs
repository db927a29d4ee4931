//! Latent graph diffusion steered by Monte Carlo tree search.
//!
//! The crate is `no_std` (with `alloc`): a small reverse-mode autodiff layer,
//! a synthetic graph domain with degree-cap validity, latent diffusion, the
//! dual-space (latent + structure) macro step, a value verifier, the search
//! controller, and the baseline samplers it is compared against.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod baselines;
pub mod checks;
pub mod counters;
pub mod diffusion;
pub mod dual;
pub mod error;
pub mod graph;
pub(crate) mod math;
pub mod nn;
pub mod noise;
pub mod search;
pub mod stats;
pub mod verifier;

pub use error::{Error, Result};
