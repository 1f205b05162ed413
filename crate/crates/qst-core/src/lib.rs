//! Bosonic quantum state tomography toolkit.
//!
//! Everything runs in a truncated Fock space (cutoff `dim`, default 32):
//! seven families of bosonic states, Husimi-Q phase-space measurement on a
//! square grid, three physically motivated corruption channels, and a set of
//! reconstruction engines ranging from linear inversion and iterative MLE to
//! gradient descent over Cholesky-style density parameterizations and two
//! small neural models built on the in-crate reverse-mode tape.

pub mod dataset;
pub mod error;
pub mod hilbert;
pub mod measurement;
pub mod nn;
pub mod noise;
pub mod par;
pub mod recon;
pub mod states;

pub use error::{Error, Result};

/// Complex scalar used throughout the crate.
pub use num_complex::Complex64 as C64;
