//! Generative modeling of vector font glyphs.
//!
//! Glyphs are canonicalized into sequences of four drawing commands
//! ([`svg_path`], [`codec`]), rendered to 64×64 rasters ([`raster`]) and
//! modeled by a class-conditioned convolutional VAE ([`vae`]) whose style
//! code drives an autoregressive LSTM + mixture-density command decoder
//! ([`svg_decoder`]). [`latent`] offers style propagation, concept
//! directions and interpolation on top of trained models.

pub mod autodiff;
pub mod codec;
pub mod dataset;
pub mod labels;
pub mod latent;
pub mod persist;
pub mod raster;
pub mod svg_decoder;
pub mod svg_path;
pub mod training;
pub mod vae;
