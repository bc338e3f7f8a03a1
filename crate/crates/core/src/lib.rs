//! Linear mixing optimization: simulated training, mixing laws, and data-mixing methods.
//!
//! The crate is `no_std` with `alloc`. Everything that touches files, threads or a
//! terminal lives in the `lmo` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod budget;
pub mod egd;
mod error;
pub mod laws;
mod linalg;
pub mod matrix;
pub mod methods;
pub mod optim;
pub mod simplex;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::InteractionMatrix;
pub use simplex::{MixtureProportions, MixtureSchedule};

/// Deterministic RNG used for every random draw.
pub type SimRng = rand_chacha::ChaCha8Rng;
