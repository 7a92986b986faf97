//! Multi-view consistent texture synthesis for indoor scene meshes.

pub mod denoise;
pub mod error;
pub mod geometry;
pub mod image;
pub mod mvis;
pub mod mvrs;
pub mod pipeline;
pub mod registry;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod schedule;

pub use error::{Error, Result};
