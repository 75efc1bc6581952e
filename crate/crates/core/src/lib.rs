//! Non-exemplar online class-incremental learning over frozen backbone
//! features: power calibration, Gaussian pseudo-features, a learned
//! hyperdimensional projection and cosine prototypes refined by a bi-level
//! loop.

pub mod api;
pub mod base_trainer;
pub mod calibration;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod losses;
pub mod numerics;
pub mod online;
pub mod projection;

pub use error::{Error, ErrorClass, Result};
