//! Calligraphy glyph generation and mask-conditioned inpainting with
//! denoising diffusion.

pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod image;
pub mod nn;
pub mod repaint;
pub mod rng;

pub use error::{Error, Result};
