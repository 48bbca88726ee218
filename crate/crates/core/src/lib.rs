//! Neural painters: differentiable surrogates of a brushstroke rasterizer,
//! and the tools built on them (stroke-based reconstruction agents, stroke
//! optimization against frozen classifiers).

pub mod agent;
pub mod canvas;
pub mod data;
pub mod dip;
pub mod error;
pub mod image;
pub mod nn;
pub mod oracle;
pub mod painter;
pub mod vision;

pub use error::{Error, Result};
pub use image::{Image, StrokeImage};
