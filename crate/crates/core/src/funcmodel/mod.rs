//! Vector-valued functions on gridded domains, multi-index calculus and
//! finite-rank functions Σ φ_i ⊗ e_i.

mod builtins;
mod field;
mod finite_rank;
mod function;
mod multiindex;
mod seminorm;

pub use builtins::{scalar_expr, FunctionSpec, DEFAULT_ORDER};
pub use field::{ConstField, ExprField, Field, FnField, LinearCombination, ProductField};
pub use finite_rank::{ExplicitFactors, FactorSource, FiniteRankFunction, SupportIndex};
pub use function::{
    fd_derivative_oracle, product_rule_apply, support_estimate, DerivativeProvider,
    SampledFunction, SUPPORT_THRESHOLD,
};
pub use multiindex::{binomial, multiindex_binom, MultiIndex, MAX_DIM};
pub use seminorm::SeminormIndex;
