//! Factor-based top-K recommenders trained by jointly minimising a weighted
//! pairwise hinge loss and a differentiable ranking-metric (DRM) loss built
//! on relaxed sort permutations.

pub mod error;
pub mod experiment;
pub mod interactions;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod relaxed_sort;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
