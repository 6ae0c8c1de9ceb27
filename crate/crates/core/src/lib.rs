//! Classifies self-reported chronic conditions from multivariate wearable
//! time series.
//!
//! The crate covers the full pipeline: synthetic cohort generation with
//! planted, recoverable signal (`cohort`), minute-level feature extraction
//! and data layering (`pipeline`), a temporal CNN with hand-written
//! backpropagation (`autonet`), single- and multi-task training (`train`),
//! classical baselines (`baselines`), and a cross-validated AUC and
//! significance-testing harness (`eval`).

pub mod autonet;
pub mod baselines;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
