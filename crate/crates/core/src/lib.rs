//! Certified finite-rank approximation of vector-valued C^k functions in
//! weighted sup-seminorms.
//!
//! The pipeline cuts a function off to a compact set, regularizes it with a
//! mollifier and replaces it by a partition-of-unity interpolant Σ φ_i ⊗ e_i,
//! recording the error budget of every step in an [`ErrorLedger`].

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bump;
pub mod cutoff;
pub mod error;
pub mod expr;
pub mod funcmodel;
pub mod geometry;
pub mod mollify;
pub mod pipeline;
pub mod seminorms;
pub mod tensorapprox;
pub mod weights;

pub use error::{Error, Result};
pub use funcmodel::{FiniteRankFunction, MultiIndex, SampledFunction, SeminormIndex};
pub use geometry::{AxisBox, Region};
pub use pipeline::{approximate, verify_ledger, ErrorLedger, Scenario};
