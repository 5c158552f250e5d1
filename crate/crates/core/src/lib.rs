//! Event-assisted deblurring for Gaussian splat scenes.
//!
//! The crate covers the full pipeline on CPU: an event camera model and
//! double-integral deblurring, a differentiable Gaussian splat rasterizer
//! with analytic gradients, exposure-time camera trajectories with
//! learnable pose offsets, the loss stack, a trainer, a synthetic dataset
//! generator, and evaluation metrics. Everything is seeded and
//! deterministic: the same inputs produce bit-identical outputs.

pub mod edi;
pub mod error;
pub mod event;
pub mod gsplat;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
mod rngutil;
pub mod se3;
pub mod synthdata;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
