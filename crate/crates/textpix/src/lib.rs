//! textpix: multimodal classification by painting text features onto images.
//!
//! The pipeline trains a small text CNN, extracts its hidden feature vector
//! per sample, quantizes the vector to bytes, paints the bytes as RGB
//! superpixels onto the paired image, and classifies the fused image with a
//! small 2-D CNN. Early-fusion and late-fusion baselines plus unimodal
//! models make the strategies directly comparable on any manifest-described
//! dataset.
//!
//! Module map:
//! - [`tensor`], [`nn`]: dense f64 tensors, layer kernels with exact
//!   backward passes, SGD, and a finite-difference gradient checker.
//! - [`vocab`], [`text_model`]: tokenization and the text classifier whose
//!   feature layer gets encoded.
//! - [`raster`], [`codec`]: PNG-backed images, bilinear resize, overlay,
//!   and the byte/superpixel codec.
//! - [`image_model`]: the small 2-D CNN for plain or fused images.
//! - [`fusion`]: early-fusion linear classifier and the logarithmic
//!   opinion pool.
//! - [`manifest`], [`synth`]: dataset manifests and the synthetic paired
//!   text+image generator.
//! - [`config`], [`experiment`], [`checkpoint`]: run configuration, the
//!   experiment/comparison/sweep drivers, and the binary checkpoint format.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod image_model;
pub mod manifest;
pub mod nn;
pub mod raster;
pub mod synth;
pub mod tensor;
pub mod text_model;
pub mod vocab;

pub use error::{Error, Result};
