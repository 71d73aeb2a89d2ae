//! Recurrent course-grade prediction with bias-mitigation strategies.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO: datasets arrive as
//! in-memory records, checkpoints leave as tensors plus metadata. File formats
//! and the command-line driver live in the `fairgrade` companion crate.
//!
//! Pipeline:
//!
//! 1. [`cohort`] holds enrollments, demographics and the chronological split.
//! 2. [`encoding`] turns a student's history into multi-hot steps.
//! 3. [`seqnet`] runs a single-layer LSTM with a per-course grade head and an
//!    adversarial race head behind a gradient-reversal scaler.
//! 4. [`losses`] implements the masked two-block cross-entropy, grade-label and
//!    sample weighting, and the adversarial race loss.
//! 5. [`trainer`] dispatches the mitigation strategies and runs Adam with early
//!    stopping.
//! 6. [`fairmetrics`] binarizes predictions at a grade cutoff and computes
//!    per-group rates with range / standard-deviation summaries.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cohort;
pub mod encoding;
mod error;
pub mod fairmetrics;
pub mod grade;
pub mod gradcheck;
pub mod losses;
mod math;
pub mod optim;
pub mod seqnet;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
