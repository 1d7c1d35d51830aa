//! Data-driven discovery of ordinary and partial differential equations from
//! gridded observations. Candidate equations are built from token products,
//! their coefficients recovered by sparse weighted regression, and their
//! structures evolved by a decomposition-based multi-objective search that
//! balances data fidelity against expression complexity.

pub mod equation;
pub mod error;
pub mod fitting;
pub mod grid;
pub mod harness;
pub mod moeadd;
pub mod preprocess;
pub mod solution;
pub mod solvers;
pub mod tokens;

pub use error::{Error, Result};
