//! Core library for a dual-path ICU length-of-stay regressor.
//!
//! The crate is organized around five pillars:
//!
//! - [`autodiff`] — a dense f64 tensor type with a tape-based reverse-mode
//!   engine, the nonlinearities/normalizations used by the model, and an
//!   AdamW optimizer with global gradient clipping.
//! - [`graph`] — multi-view patient similarity graph construction: three
//!   diagnosis-similarity KNN strategies, a Gaussian-kernel embedding graph,
//!   view fusion with typed edges, MST bridging, personalized-PageRank
//!   diffusion, weight normalization/pruning and stratified degree capping.
//! - [`cohort`] — cohort file formats, a seeded synthetic cohort generator
//!   with a planted outcome signal, patient-wise splitting, and forward-fill
//!   imputation with an exponential decay channel.
//! - [`model`] — the network itself: state-space temporal encoder,
//!   local+global graph encoder, static-feature encoder, weighted fusion and
//!   the log-domain weighted Huber objective.
//! - [`metrics`] / [`train`] — evaluation metrics (incl. weighted kappa and
//!   calibration) and the mini-batch training loop with early stopping.

pub mod autodiff;
pub mod cohort;
pub mod config;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod train;

mod error;

pub use error::{Error, Result};
