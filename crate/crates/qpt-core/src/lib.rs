//! Compressed-sensing quantum process tomography.
//!
//! Channels on `ℂⁿ` are represented by their Choi matrices
//! `J(T) = Σᵢⱼ T(|i⟩⟨j|) ⊗ |i⟩⟨j|` (output factor first), so trace preservation
//! reads `Tr₁ J(T) = 𝟙`. The crate provides measurement ensembles, a first-order
//! conic solver, the five reconstruction programs and analytic/Monte Carlo
//! verification oracles.

pub mod channels;
pub mod conic;
pub mod error;
pub mod linalg;
pub mod measurements;
pub mod reconstruct;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
