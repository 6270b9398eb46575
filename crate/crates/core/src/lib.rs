//! Contaminated mixture-of-experts laboratory.
//!
//! A frozen base density `f₀` with expert `φ` is mixed with a trainable
//! Gaussian prompt with expert `σ`:
//!
//! ```text
//! p(y | x) = (1 − λ) f₀(y | φ(a₀ᵀx + b₀), ν₀) + λ f(y | σ(aᵀx + b), ν)
//! ```
//!
//! The crate evaluates and samples this model, fits `(λ, a, b, ν)` by
//! generalized EM, computes the parameter-loss metrics used to state
//! convergence rates, and runs seeded replicate experiments that fit
//! log-log slopes of estimation error against sample size.

pub mod densities;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod experts;
pub mod losses;
pub mod model;
pub mod ratelab;
pub mod sum;

pub use densities::{BaseFamily, BaseKind, ComponentParams};
pub use error::{Error, Result};
pub use estimation::{fit_em, FitOptions, InitSpec, MleResult};
pub use experts::ExpertFn;
pub use model::{ContaminatedModel, Dataset};
