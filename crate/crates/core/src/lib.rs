//! Wishart trace moments by Wick pairing enumeration, and what they say about
//! the output variance of Cholesky-normalized Lipschitz layers
//! `M = γ W (αI + WᵀW)^{-1/2}`.
//!
//! - [`wick`]: exact integer tables `C_{a,b}` of `E[tr(S^k)] = σ^{2k} Σ C_{a,b} n^a m^b`.
//! - [`moment_eval`]: the truncated resolvent series and the variance estimate.
//! - [`linalg`]: the dense kernel behind the Monte Carlo oracle.
//! - [`mc`]: Monte Carlo estimates of the same quantities.
//! - [`solver`]: initialization scales for a target variance, and sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundled;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod moment_eval;
pub mod output;
pub mod solver;
pub mod wick;

pub use error::{Error, Result};
pub use linalg::{CholeskyFactor, DenseMatrix};
pub use mc::{Activation, McConfig, McEstimate};
pub use moment_eval::{LayerSpec, MomentSet, TruncationPolicy, VarianceReport, WishartSpec};
pub use solver::{EvalOptions, Method, Scaling, Solution, VariancePoint};
pub use wick::{Matching, MomentTable};
