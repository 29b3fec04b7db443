//! Simulation and verification toolkit for randomized mutual exclusion over
//! a single test-and-set variable.

pub mod adversary;
pub mod analysis;
pub mod engine;
pub mod experiment;
pub mod protocol;
pub mod scalar;
pub mod trace;

pub use scalar::{Probability, Rational};

/// Lottery-value distribution in exact arithmetic.
pub type ExactDist = analysis::Dist<Rational>;
/// Lottery-value distribution in double precision.
pub type FloatDist = analysis::Dist<f64>;
/// Lottery-value distribution in single precision.
pub type Float32Dist = analysis::Dist<f32>;
