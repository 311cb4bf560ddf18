//! Signal and first-order noise propagation through randomly initialized
//! convolutional networks, with the moment statistics used to tell healthy
//! initializations from pathological ones.
//!
//! Layout:
//! - [`tensor`]: batched fields, periodic convolution, receptive fields, He init, seeded streams
//! - [`propagation`]: activation / batch-norm steps and the three network families
//! - [`statistics`]: moments, effective rank, normalized sensitivity, fits, accumulators
//! - [`harness`]: inputs, Monte-Carlo runs, validators
//! - [`io`]: config parsing and result files

pub mod error;
pub mod harness;
pub mod io;
pub mod propagation;
pub mod statistics;
pub mod tensor;

pub use error::{Error, Result};
