//! Simulation and optimization of pulse-encoded inference on binary
//! memristive crossbars.
//!
//! The crate is organized bottom-up:
//!
//! - [`encoding`]: activation quantization and binary pulse encodings
//!   (bit slicing, thermometer coding, pulse length approximation) together
//!   with their closed-form noise variances.
//! - [`crossbar`]: binary weight arrays and pulse-by-pulse noisy
//!   matrix-vector multiplication.
//! - [`rng`]: counter-based Gaussian streams so that every noise draw is a
//!   pure function of `(seed, stream, index)`.
//! - [`network`]: a small binary-weight network engine (fc + conv layers,
//!   batch norm, tanh, 9-level activations) with hand-written backward passes.
//! - [`gbo`]: learned per-layer pulse-count selection.
//! - [`sensitivity`]: single-layer noise injection sweeps.
//! - [`nia`]: noise-injection fine-tuning.

pub mod crossbar;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod gbo;
pub mod network;
pub mod nia;
pub mod optim;
pub mod rng;
pub mod sensitivity;

pub use error::{Error, Result};
