//! Numerical laboratory for convex multi-matrix Gibbs models
//! `mu ∝ exp(-N^2 V)` on tuples of Hermitian matrices: exact-stationarity
//! sampling, symbolic trace-polynomial calculus, conditional expectations,
//! conditional entropy and Fisher information, and ODE-driven transport
//! maps to the GUE law (including the triangular transport and the
//! entropy-cost inequality witness).

pub mod config;
pub mod condexp;
pub mod entropy;
pub mod error;
pub mod matrix;
pub mod oracles;
pub mod potential;
pub mod rng;
pub mod sampler;
pub mod semigroup;
pub mod tracepoly;
pub mod transport;
pub mod verify;

pub use error::CoreError;
pub use matrix::{CMatrix, MatrixTuple};
pub use potential::{Block, PotentialSpec};
pub use tracepoly::{OperatorTracePoly, ScalarTracePoly, Word};
