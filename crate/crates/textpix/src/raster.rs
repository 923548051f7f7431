//! 8-bit RGB raster images: PNG round-tripping, corner-aligned bilinear
//! resize, and opaque region overlay.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    /// Row-major RGB triples, `3 * width * height` bytes.
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32) -> Result<RasterImage> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(RasterImage {
            width,
            height,
            pixels: vec![0; (width * height * 3) as usize],
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<RasterImage> {
        if pixels.len() != (width * height * 3) as usize {
            return Err(Error::shape(
                "raster",
                format!(
                    "{width}x{height} RGB image needs {} bytes, got {}",
                    width * height * 3,
                    pixels.len()
                ),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let off = ((y * self.width + x) * 3) as usize;
        [self.pixels[off], self.pixels[off + 1], self.pixels[off + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let off = ((y * self.width + x) * 3) as usize;
        self.pixels[off..off + 3].copy_from_slice(&rgb);
    }

    pub fn fill(&mut self, rgb: [u8; 3]) {
        for px in self.pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
    }

    /// Writes the image as 8-bit RGB PNG (no alpha).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<RasterImage> {
        let img = image::open(path)?.into_rgb8();
        RasterImage::from_pixels(img.width(), img.height(), img.into_raw())
    }
}

/// Replaces the rectangle of `base` at `anchor` with `patch`, leaving every
/// other pixel bit-identical. The patch must fit entirely inside the base.
pub fn overlay(base: &RasterImage, patch: &RasterImage, anchor: (u32, u32)) -> Result<RasterImage> {
    let (ax, ay) = anchor;
    if ax + patch.width > base.width || ay + patch.height > base.height {
        return Err(Error::InvalidInput(format!(
            "patch {}x{} at ({ax}, {ay}) exceeds base {}x{}",
            patch.width, patch.height, base.width, base.height
        )));
    }
    let mut out = base.clone();
    for y in 0..patch.height {
        let src = ((y * patch.width) * 3) as usize;
        let dst = (((ay + y) * base.width + ax) * 3) as usize;
        let row_len = (patch.width * 3) as usize;
        out.pixels[dst..dst + row_len].copy_from_slice(&patch.pixels[src..src + row_len]);
    }
    Ok(out)
}

/// Bilinear resize with corner-aligned sampling: destination pixel `i` of
/// `n` samples the source at `i * (src_len - 1) / (n - 1)`. A same-size
/// resize is therefore the exact identity. Interpolated channel values
/// round half away from zero.
pub fn resize_bilinear(img: &RasterImage, width: u32, height: u32) -> Result<RasterImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("resize target must be at least 1x1".into()));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let src_pos = |dst: u32, dst_len: u32, src_len: u32| -> f64 {
        if dst_len <= 1 {
            0.0
        } else {
            dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
        }
    };
    let mut out = RasterImage::new(width, height)?;
    for y in 0..height {
        let sy = src_pos(y, height, img.height);
        let y0 = sy.floor() as u32;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..width {
            let sx = src_pos(x, width, img.width);
            let x0 = sx.floor() as u32;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let p00 = img.get(x0, y0);
            let p10 = img.get(x1, y0);
            let p01 = img.get(x0, y1);
            let p11 = img.get(x1, y1);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                rgb[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, rgb);
        }
    }
    Ok(out)
}
