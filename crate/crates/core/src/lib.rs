//! Variational autoencoders on raw audio, latent-space evaluation and
//! morph rendering.

pub mod audio;
pub mod error;
pub mod eval;
pub mod features;
pub mod morph;
pub mod nn;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
