//! Hierarchical rater-mediated signal-detection measurement engine.
//!
//! Learner competencies and case shifts drive a latent performance level
//! per (learner, item) through an ordered logit; raters map that level to an
//! observed 1–5 score through their own detection and criteria. The crate
//! simulates such data, fits the model with a No-U-Turn sampler and computes
//! post-estimation diagnostics.

pub mod analysis;
pub mod design;
pub mod error;
pub mod model;
pub mod sampler;
pub mod simulator;

pub use error::{Error, Result};
