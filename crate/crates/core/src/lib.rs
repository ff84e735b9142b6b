//! Numerical laboratory for layer-peeled next-token models with
//! group-symmetric targets.
//!
//! The crate builds orbit target matrices from permutation groups, solves the
//! budget-constrained factored cross-entropy problem by multi-restart projected
//! gradient, computes the closed-form and convex characterizations of its
//! minimizers for cyclic and 2-transitive symmetry, solves a PSD-lifted convex
//! relaxation for composite groups, and measures how close Gram matrices are
//! to simplex-ETF and circulant geometry.

pub mod cyclic;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod groups;
pub mod io;
pub mod layer_peeled;
pub mod lifted;
pub mod numerics;
pub mod perm;

pub use error::{Error, Result};
pub use exec::{CancelToken, Execution};
pub use numerics::Matrix;
