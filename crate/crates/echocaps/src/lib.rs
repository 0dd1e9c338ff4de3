//! Dataset files, image files, checkpoints and the training harness.

pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod harness;
pub mod imagefile;
mod kv;
pub mod model;

pub use error::{Error, Result};
