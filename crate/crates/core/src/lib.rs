//! Tactile shape reconstruction: simulated touches on watertight meshes,
//! local contact geometry from depth images, and full-shape completion with
//! a latent-conditioned signed-distance decoder.

mod binio;
mod nn;
pub mod error;
pub mod chart;
pub mod decoder;
pub mod geometry;
pub mod isosurface;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod touch;

pub use error::{Error, Result};
