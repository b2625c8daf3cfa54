//! Continuous-time graph propagation for node classification.
//!
//! Node representations evolve under a linear ODE driven by a regularized,
//! symmetric-normalized adjacency operator and a restart term that keeps
//! every node anchored to its encoded features:
//!
//! ```text
//! dH/dt = (A - I) H + E                     (independent channels)
//! dH/dt = (A - I) H + H (W - I) + E         (channel mixing)
//! ```
//!
//! The crate provides the graph operators ([`graph`]), dense spectral
//! utilities ([`spectral`]), forward integration and constant-memory adjoint
//! gradients ([`dynamics`]), analytic solutions used as oracles
//! ([`closed_form`]), the node-classification model and training loop
//! ([`model`]), the on-disk dataset format and synthetic generators
//! ([`datasets`]), a feature-only logistic-regression reference
//! ([`baseline`]) and the oracle suite behind `cgnn verify` ([`oracles`]).

pub mod baseline;
pub mod closed_form;
pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod mem;
pub mod model;
pub mod oracles;
pub mod spectral;

pub use error::{Error, Result};

/// Dense row/column matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;

#[cfg(test)]
pub(crate) mod testutil;
