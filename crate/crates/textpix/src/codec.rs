//! The feature-to-pixel codec: quantize a feature vector into bytes, paint
//! the bytes as RGB superpixels, and read them back exactly.
//!
//! A superpixel is a `P x P` block of identical color encoding three
//! consecutive bytes. Superpixels fill the grid left to right, top to
//! bottom, so a length-L vector occupies a fixed `grid_width*P` by
//! `grid_height*P` region regardless of the source text.

use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::text_model::NormStats;

/// Where and how large the superpixel grid is on the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingGeometry {
    /// Superpixel grid columns (Wt).
    pub grid_width: u32,
    /// Superpixel grid rows (Ht).
    pub grid_height: u32,
    /// Superpixel side length in pixels (P).
    pub superpixel: u32,
    /// Top-left pixel of the encoding region on the target image.
    pub anchor: (u32, u32),
}

impl EncodingGeometry {
    pub fn new(grid_width: u32, grid_height: u32, superpixel: u32, anchor: (u32, u32)) -> Result<Self> {
        if grid_width == 0 || grid_height == 0 || superpixel == 0 {
            return Err(Error::InvalidConfig(
                "encoding grid dimensions and superpixel size must be positive".into(),
            ));
        }
        Ok(EncodingGeometry {
            grid_width,
            grid_height,
            superpixel,
            anchor,
        })
    }

    /// Number of feature values this geometry encodes: `3 * Wt * Ht`.
    pub fn feature_len(&self) -> usize {
        3 * (self.grid_width * self.grid_height) as usize
    }

    /// Pixel size of the encoding region.
    pub fn region_size(&self) -> (u32, u32) {
        (self.grid_width * self.superpixel, self.grid_height * self.superpixel)
    }

    /// Checks that the region, placed at the anchor, fits inside a
    /// `width x height` image.
    pub fn fits_within(&self, width: u32, height: u32) -> Result<()> {
        let (rw, rh) = self.region_size();
        let (ax, ay) = self.anchor;
        if ax + rw > width || ay + rh > height {
            return Err(Error::InvalidConfig(format!(
                "encoding region {rw}x{rh} at ({ax}, {ay}) does not fit a {width}x{height} image"
            )));
        }
        Ok(())
    }
}

/// A feature vector mapped to bytes, ready to paint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVector {
    pub bytes: Vec<u8>,
}

impl QuantizedVector {
    pub fn new(bytes: Vec<u8>) -> Result<QuantizedVector> {
        if bytes.is_empty() || bytes.len() % 3 != 0 {
            return Err(Error::InvalidInput(format!(
                "quantized vector length {} must be a positive multiple of 3",
                bytes.len()
            )));
        }
        Ok(QuantizedVector { bytes })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Maps each dimension to a byte:
/// `round(255 * (v - min) / (max - min))`, rounding half away from zero,
/// clamped to `[0, 255]`. Dimensions with `min == max` map to 0.
pub fn quantize(values: &[f64], stats: &NormStats) -> Result<QuantizedVector> {
    if values.len() != stats.len() {
        return Err(Error::shape(
            "quantize",
            format!("vector length {} does not match stats length {}", values.len(), stats.len()),
        ));
    }
    let bytes = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = (stats.min[i], stats.max[i]);
            if hi <= lo {
                0u8
            } else {
                let scaled = 255.0 * (v - lo) / (hi - lo);
                scaled.round().clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    QuantizedVector::new(bytes)
}

/// Inverse map for verification: `min + (byte/255) * (max - min)`.
pub fn dequantize(q: &QuantizedVector, stats: &NormStats) -> Result<Vec<f64>> {
    if q.len() != stats.len() {
        return Err(Error::shape(
            "dequantize",
            format!("vector length {} does not match stats length {}", q.len(), stats.len()),
        ));
    }
    Ok(q
        .bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| stats.min[i] + (b as f64 / 255.0) * (stats.max[i] - stats.min[i]))
        .collect())
}

/// Paints the quantized vector as a standalone region image of size
/// `grid_width*P x grid_height*P`. Superpixel `i` takes color
/// `(bytes[3i], bytes[3i+1], bytes[3i+2])` and fills the block at grid cell
/// `(row = i / grid_width, col = i % grid_width)`.
pub fn encode_superpixels(q: &QuantizedVector, geom: &EncodingGeometry) -> Result<RasterImage> {
    if q.len() != geom.feature_len() {
        return Err(Error::shape(
            "encode_superpixels",
            format!(
                "vector length {} does not match geometry {}x{} (needs {})",
                q.len(),
                geom.grid_width,
                geom.grid_height,
                geom.feature_len()
            ),
        ));
    }
    let (rw, rh) = geom.region_size();
    let p = geom.superpixel;
    let mut img = RasterImage::new(rw, rh)?;
    for i in 0..(geom.grid_width * geom.grid_height) as usize {
        let rgb = [q.bytes[3 * i], q.bytes[3 * i + 1], q.bytes[3 * i + 2]];
        let row = i as u32 / geom.grid_width;
        let col = i as u32 % geom.grid_width;
        for dy in 0..p {
            for dx in 0..p {
                img.set(col * p + dx, row * p + dy, rgb);
            }
        }
    }
    Ok(img)
}

/// Reads the encoding region back out of `img` at the geometry's anchor.
/// Each superpixel's color is taken from its top-left pixel, so a block
/// corrupted into non-uniformity still decodes (lossily) from that pixel.
/// For images produced by [`encode_superpixels`] + overlay this is the
/// exact inverse.
pub fn decode_superpixels(img: &RasterImage, geom: &EncodingGeometry) -> Result<QuantizedVector> {
    geom.fits_within(img.width(), img.height())?;
    let p = geom.superpixel;
    let (ax, ay) = geom.anchor;
    let mut bytes = Vec::with_capacity(geom.feature_len());
    for i in 0..(geom.grid_width * geom.grid_height) {
        let row = i / geom.grid_width;
        let col = i % geom.grid_width;
        let rgb = img.get(ax + col * p, ay + row * p);
        bytes.extend_from_slice(&rgb);
    }
    QuantizedVector::new(bytes)
}
