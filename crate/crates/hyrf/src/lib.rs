//! Hybrid radiance fields: a compact set of explicit Gaussians carrying
//! high-frequency residuals, plus decoupled grid-based neural fields that
//! predict the remaining Gaussian properties. A differentiable splatting
//! pipeline with background-sphere compositing renders and trains the
//! representation; a codec packs trained models with residual vector
//! quantization and entropy coding.

pub mod camera;
pub mod codec;
pub mod config;
pub mod decoder;
pub mod error;
pub mod field;
pub mod gaussians;
pub mod io;
pub mod math;
pub mod model;
pub mod render;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
