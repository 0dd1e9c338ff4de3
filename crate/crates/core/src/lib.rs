//! Height classification of obstacles from single-sensor automotive ultrasonic echoes.
//!
//! The crate is `no_std` compatible (with `alloc`). It contains the pure
//! algorithmic parts of the pipeline:
//!
//! * [`echosim`]: a parametric simulator producing labeled raw sensor traces,
//! * [`dsp`]: band-pass filtering, IQ down-conversion, resampling to a 14x14
//!   complex grid and 16-bit quantization,
//! * [`numerics`]: a small tensor core with analytic gradients and Adam,
//! * [`capsnet`]: the capsule network with routing-by-agreement,
//! * [`cnn`]: the convolutional baseline used for comparison.
//!
//! File formats, the training harness and the command-line tool live in the
//! `echocaps` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod capsnet;
pub mod class;
pub mod cnn;
pub mod config;
pub mod dsp;
pub mod echosim;
mod error;
pub mod numerics;
pub mod stem;

pub use class::HeightClass;
pub use config::SignalConfig;
pub use error::{Error, Result};
pub use stem::InputVariant;
